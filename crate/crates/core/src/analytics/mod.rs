//! Corpus-scale labeling and the time-binned, mobility and distance analyses run on the
//! resulting tuples.

mod geo;
mod series;
pub mod synthetic;

pub use geo::{
    distance_km, geocode_tuples, GazetteerBackend, GeoCache, GeoPoint, GeoResult, GeocodeBackend, GeocodeStats, Geocoder,
    HttpGeocoder, EARTH_RADIUS_KM,
};
pub use series::{
    birth_distance_distribution, bin_start, departure_ratio_series, life_stage_histogram, paired_nonempty, pearson, ratios_csv,
    type_ratio_series, DepartureBin, DepartureSeries, DistanceDistribution, LifeStages, RatioPoint, STAGE_TYPES,
};

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::dataset::{DatasetVariant, TrajectorySample};
use crate::error::Result;
use crate::fusion::Checkpoint;
use crate::train::{predict, prepare_sample, PrepareOptions, Skipped};
use crate::taxonomy::ActivityType;
use crate::Scalar;

/// One classified trajectory triple.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledTuple {
    pub person: String,
    pub year: Option<i32>,
    pub time: String,
    pub location: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latitude: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub longitude: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub country: Option<String>,
    #[serde(rename = "type")]
    pub activity: ActivityType,
    pub source_sample_id: String,
}

impl LabeledTuple {
    pub fn point(&self) -> Option<GeoPoint> {
        GeoPoint::new(self.latitude?, self.longitude?).ok()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PersonTimeline {
    pub person: String,
    pub tuples: Vec<LabeledTuple>,
}

/// First run of exactly four digits in a time expression.
pub fn extract_year(time: &str) -> Option<i32> {
    let mut digits = String::new();
    for c in time.chars().chain(std::iter::once(' ')) {
        if c.is_ascii_digit() {
            digits.push(c);
        } else {
            if digits.len() == 4 {
                return digits.parse().ok();
            }
            digits.clear();
        }
    }
    None
}

/// Group by person, sort each group by year (stable on ties) and keep persons with at
/// least `min_tuples` dated tuples. Undated tuples are left out.
pub fn build_timelines(tuples: &[LabeledTuple], min_tuples: usize) -> Vec<PersonTimeline> {
    let mut by_person: BTreeMap<&str, Vec<LabeledTuple>> = BTreeMap::new();
    for t in tuples.iter().filter(|t| t.year.is_some()) {
        by_person.entry(t.person.as_str()).or_default().push(t.clone());
    }
    by_person
        .into_iter()
        .filter(|(_, v)| v.len() >= min_tuples)
        .map(|(person, mut v)| {
            v.sort_by_key(|t| t.year);
            PersonTimeline {
                person: person.to_string(),
                tuples: v,
            }
        })
        .collect()
}

/// Keep timelines with at least `min_tuples` entries.
pub fn filter_timelines(timelines: &[PersonTimeline], min_tuples: usize) -> Vec<PersonTimeline> {
    timelines.iter().filter(|t| t.tuples.len() >= min_tuples).cloned().collect()
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassifyStats {
    pub inputs: usize,
    pub emitted: usize,
    /// Already present in the output from an earlier run.
    pub resumed: usize,
    /// Emitted without a year; excluded from time-binned analyses.
    pub year_missing: Vec<String>,
    pub failed: Vec<Skipped>,
}

/// Label samples with a checkpoint, streaming tuples into `sink` in input order.
///
/// Samples whose id is in `done` are skipped, which makes an interrupted run resumable
/// by passing the ids already written. `inputs == emitted + resumed + failed` always holds.
pub fn classify_corpus<T: Scalar>(
    samples: &[TrajectorySample],
    ckpt: &Checkpoint<T>,
    variant: DatasetVariant,
    done: &HashSet<String>,
    chunk: usize,
    mut sink: impl FnMut(&LabeledTuple) -> Result<()>,
) -> Result<ClassifyStats> {
    let opts = PrepareOptions::from_manifest(&ckpt.manifest, variant);
    let mut stats = ClassifyStats {
        inputs: samples.len(),
        ..Default::default()
    };
    for part in samples.chunks(chunk.max(1)) {
        let mut ready = Vec::new();
        for s in part {
            if done.contains(&s.id) {
                stats.resumed += 1;
                continue;
            }
            match prepare_sample(s, &ckpt.tokenizer, &opts) {
                Ok(p) => ready.push((s, p)),
                Err(e) => stats.failed.push(Skipped {
                    id: s.id.clone(),
                    reason: e.to_string(),
                }),
            }
        }
        let refs: Vec<_> = ready.iter().map(|(_, p)| p).collect();
        let preds = predict(&ckpt.model, &refs, ckpt.manifest.mode)?;
        for ((s, _), (class, _)) in ready.iter().zip(preds) {
            let triple = s.triple();
            let year = extract_year(&triple.time.text);
            if year.is_none() {
                stats.year_missing.push(s.id.clone());
            }
            let tuple = LabeledTuple {
                person: s.person_resolved.clone().unwrap_or_else(|| triple.person.text.clone()),
                year,
                time: triple.time.text.clone(),
                location: triple.location.text.clone(),
                latitude: None,
                longitude: None,
                country: None,
                activity: ckpt.manifest.granularity.representative(class),
                source_sample_id: s.id.clone(),
            };
            sink(&tuple)?;
            stats.emitted += 1;
        }
    }
    Ok(stats)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn tuple(person: &str, year: i32, activity: ActivityType) -> LabeledTuple {
        LabeledTuple {
            person: person.into(),
            year: Some(year),
            time: year.to_string(),
            location: "X".into(),
            latitude: None,
            longitude: None,
            country: None,
            activity,
            source_sample_id: format!("{person}-{year}"),
        }
    }

    #[test]
    fn years() {
        assert_eq!(extract_year("From 1946 to 1948"), Some(1946));
        assert_eq!(extract_year("1905"), Some(1905));
        assert_eq!(extract_year("last summer"), None);
        assert_eq!(extract_year("in 19055"), None);
        assert_eq!(extract_year("May 3, 1921"), Some(1921));
    }

    #[test]
    fn timelines_sort_stably_and_filter() {
        let mut ts = vec![
            tuple("A", 1910, ActivityType::Career),
            tuple("A", 1900, ActivityType::Birth),
            tuple("A", 1910, ActivityType::Movement),
            tuple("A", 1920, ActivityType::Death),
            tuple("B", 1900, ActivityType::Birth),
        ];
        ts[2].location = "second".into();
        let tl = build_timelines(&ts, 4);
        assert_eq!(tl.len(), 1);
        let acts: Vec<_> = tl[0].tuples.iter().map(|t| t.activity).collect();
        assert_eq!(
            acts,
            [ActivityType::Birth, ActivityType::Career, ActivityType::Movement, ActivityType::Death]
        );
        assert_eq!(filter_timelines(&tl, 4), tl);
        assert_eq!(filter_timelines(&filter_timelines(&tl, 4), 4), tl);
    }
}
