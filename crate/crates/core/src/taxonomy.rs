//! The fixed label space: 24 activity types grouped into 9 categories.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

macro_rules! activity_types {
    ($($variant:ident => $name:literal, $cat:ident;)*) => {
        /// One of the 24 life-trajectory activity types.
        ///
        /// The discriminant is the stable internal id; files always carry the name.
        #[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
        pub enum ActivityType {
            $($variant,)*
        }

        impl ActivityType {
            pub const ALL: [ActivityType; 24] = [$(ActivityType::$variant,)*];

            pub fn name(self) -> &'static str {
                match self {
                    $(ActivityType::$variant => $name,)*
                }
            }

            pub fn category(self) -> Category {
                match self {
                    $(ActivityType::$variant => Category::$cat,)*
                }
            }
        }
    };
}

activity_types! {
    Birth => "Birth", Life;
    Death => "Death", Life;
    Marriage => "Marriage", Life;
    InjureAndIllness => "Injure and Illness", Life;
    Settlement => "Settlement", Life;
    Education => "Education", Life;
    GiveBirth => "Give birth", Life;
    Accident => "Accident", Life;
    PurchaseAndSell => "Purchase and Sell", Life;
    Divorce => "Divorce", Life;
    Career => "Career", Career;
    Competition => "Competition", ProEvent;
    Performance => "Performance", ProEvent;
    Exhibition => "Exhibition", ProEvent;
    Creation => "Creation", ProEvent;
    Campaign => "Campaign", ProEvent;
    StartOrg => "Start org", ProEvent;
    Meet => "Meet", Contact;
    Assembly => "Assembly", Contact;
    Justice => "Justice", Justice;
    Attack => "Attack", Attack;
    Movement => "Movement", Movement;
    Military => "Military", Military;
    Other => "Other", Other;
}

/// The 9 coarse categories.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Category {
    Life,
    Career,
    ProEvent,
    Contact,
    Justice,
    Attack,
    Movement,
    Military,
    Other,
}

impl Category {
    pub const ALL: [Category; 9] = [
        Category::Life,
        Category::Career,
        Category::ProEvent,
        Category::Contact,
        Category::Justice,
        Category::Attack,
        Category::Movement,
        Category::Military,
        Category::Other,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Category::Life => "Life",
            Category::Career => "Career",
            Category::ProEvent => "Pro-Event",
            Category::Contact => "Contact",
            Category::Justice => "Justice",
            Category::Attack => "Attack",
            Category::Movement => "Movement",
            Category::Military => "Military",
            Category::Other => "Other",
        }
    }

    pub fn id(self) -> usize {
        self as usize
    }

    pub fn from_id(id: usize) -> Option<Category> {
        Category::ALL.get(id).copied()
    }

    pub fn types(self) -> impl Iterator<Item = ActivityType> {
        ActivityType::ALL
            .into_iter()
            .filter(move |t| t.category() == self)
    }
}

impl ActivityType {
    pub const COUNT: usize = 24;

    pub fn id(self) -> usize {
        self as usize
    }

    pub fn from_id(id: usize) -> Option<ActivityType> {
        ActivityType::ALL.get(id).copied()
    }
}

fn normalize(s: &str) -> String {
    s.split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

/// Case-insensitive, whitespace-normalized lookup of a type name.
pub fn parse_label(s: &str) -> Result<ActivityType> {
    let wanted = normalize(s);
    ActivityType::ALL
        .into_iter()
        .find(|t| normalize(t.name()) == wanted)
        .ok_or_else(|| Error::UnknownLabel {
            input: s.to_string(),
            valid: ActivityType::ALL.map(|t| t.name()).join(", "),
        })
}

pub fn category_of(t: ActivityType) -> Category {
    t.category()
}

impl fmt::Display for ActivityType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ActivityType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        parse_label(s)
    }
}

impl Serialize for ActivityType {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for ActivityType {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        parse_label(&s).map_err(serde::de::Error::custom)
    }
}

/// Classification granularity: fine-grained types or coarse categories.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Granularity {
    #[default]
    Type,
    Category,
}

impl Granularity {
    pub fn class_count(self) -> usize {
        match self {
            Granularity::Type => ActivityType::COUNT,
            Granularity::Category => Category::ALL.len(),
        }
    }

    pub fn class_of(self, t: ActivityType) -> usize {
        match self {
            Granularity::Type => t.id(),
            Granularity::Category => t.category().id(),
        }
    }

    pub fn class_name(self, class: usize) -> &'static str {
        match self {
            Granularity::Type => ActivityType::ALL[class].name(),
            Granularity::Category => Category::ALL[class].name(),
        }
    }

    /// Representative type for a class id, used when materializing category predictions.
    pub fn representative(self, class: usize) -> ActivityType {
        match self {
            Granularity::Type => ActivityType::ALL[class],
            Granularity::Category => Category::ALL[class]
                .types()
                .next()
                .expect("every category is non-empty"),
        }
    }
}

/// Sum per-type counts into per-category counts.
pub fn rollup_counts(per_type: &[u64; ActivityType::COUNT]) -> [u64; 9] {
    let mut out = [0u64; 9];
    for t in ActivityType::ALL {
        out[t.category().id()] += per_type[t.id()];
    }
    out
}

/// One record of the shipped taxonomy file.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct TaxonomyEntry {
    pub name: String,
    pub category: String,
    pub gloss: String,
}

pub const TAXONOMY_JSON: &str = include_str!("../data/taxonomy.json");

/// Parse the shipped taxonomy file and check it against the compiled label space.
pub fn taxonomy_entries() -> Result<Vec<TaxonomyEntry>> {
    let entries: Vec<TaxonomyEntry> = serde_json::from_str(TAXONOMY_JSON)?;
    if entries.len() != ActivityType::COUNT {
        return Err(Error::validation(format!(
            "taxonomy file has {} entries, expected {}",
            entries.len(),
            ActivityType::COUNT
        )));
    }
    for (entry, t) in entries.iter().zip(ActivityType::ALL) {
        if entry.name != t.name() || entry.category != t.category().name() {
            return Err(Error::validation(format!(
                "taxonomy entry {:?}/{:?} does not match {}/{}",
                entry.name,
                entry.category,
                t.name(),
                t.category().name()
            )));
        }
    }
    Ok(entries)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::HashSet;

    #[test]
    fn category_examples() {
        assert_eq!(category_of(ActivityType::Birth), Category::Life);
        assert_eq!(category_of(ActivityType::Career), Category::Career);
        assert_eq!(category_of(ActivityType::StartOrg), Category::ProEvent);
        assert_eq!(Category::ProEvent.name(), "Pro-Event");
    }

    #[test]
    fn parse_examples() {
        assert_eq!(parse_label("career").unwrap(), ActivityType::Career);
        assert_eq!(parse_label("Give birth").unwrap(), ActivityType::GiveBirth);
        assert_eq!(
            parse_label("  injure   AND illness ").unwrap(),
            ActivityType::InjureAndIllness
        );
        let err = parse_label("Retirement").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("Retirement"));
        assert!(msg.contains("Start org"));
    }

    #[test]
    fn label_space_shape() {
        let ids: HashSet<usize> = ActivityType::ALL.iter().map(|t| t.id()).collect();
        assert_eq!(ids, (0..24).collect());
        let sizes: Vec<usize> = Category::ALL.iter().map(|c| c.types().count()).collect();
        assert_eq!(sizes.iter().sum::<usize>(), 24);
        assert_eq!(sizes[Category::Life.id()], 10);
        for c in [
            Category::Career,
            Category::Justice,
            Category::Attack,
            Category::Movement,
            Category::Military,
            Category::Other,
        ] {
            let members: Vec<_> = c.types().collect();
            assert_eq!(members.len(), 1);
            assert_eq!(members[0].name(), c.name());
        }
    }

    #[test]
    fn shipped_file_matches() {
        let entries = taxonomy_entries().unwrap();
        assert_eq!(entries[21].name, "Movement");
        assert_eq!(entries[21].category, "Movement");
    }

    #[test]
    fn serde_uses_names() {
        let s = serde_json::to_string(&ActivityType::StartOrg).unwrap();
        assert_eq!(s, "\"Start org\"");
        let t: ActivityType = serde_json::from_str("\"start ORG\"").unwrap();
        assert_eq!(t, ActivityType::StartOrg);
    }

    proptest! {
        #[test]
        fn render_parse_round_trip(id in 0usize..24) {
            let t = ActivityType::from_id(id).unwrap();
            prop_assert_eq!(parse_label(&t.to_string()).unwrap(), t);
        }

        #[test]
        fn rollup_preserves_total(counts in proptest::array::uniform24(0u64..1000)) {
            let rolled = rollup_counts(&counts);
            prop_assert_eq!(rolled.iter().sum::<u64>(), counts.iter().sum::<u64>());
        }
    }
}
