//! Generators with planted structure for checking the analyses end to end.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::analytics::{LabeledTuple, PersonTimeline};
use crate::taxonomy::ActivityType;

fn tuple(person: String, year: i32, activity: ActivityType, idx: usize) -> LabeledTuple {
    LabeledTuple {
        time: year.to_string(),
        year: Some(year),
        location: "Somewhere".into(),
        latitude: None,
        longitude: None,
        country: None,
        activity,
        source_sample_id: format!("syn-{idx}"),
        person,
    }
}

/// Planted counts of the war-spike corpus per 5-year bin.
#[derive(Clone, Debug)]
pub struct WarSpikePlan {
    pub per_bin: u64,
    pub military: BTreeMap<i32, u64>,
    pub competition: BTreeMap<i32, u64>,
    pub war_bins: Vec<i32>,
}

/// 1900-1999 in 5-year bins. War bins (1910, 1915, 1940, 1945) carry a high military
/// share and a low competition share; every other bin the reverse.
pub fn war_spike_corpus(per_bin: u64, seed: u64) -> (Vec<LabeledTuple>, WarSpikePlan) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let war_bins = vec![1910, 1915, 1940, 1945];
    let mut plan = WarSpikePlan {
        per_bin,
        military: BTreeMap::new(),
        competition: BTreeMap::new(),
        war_bins: war_bins.clone(),
    };
    let mut out = Vec::new();
    for bin in (1900..2000).step_by(5) {
        let war = war_bins.contains(&bin);
        let (mil, comp) = if war {
            (per_bin * 3 / 10, per_bin / 20)
        } else {
            (per_bin / 20 + rng.random_range(0..2), per_bin / 4 - rng.random_range(0..2))
        };
        plan.military.insert(bin, mil);
        plan.competition.insert(bin, comp);
        let mut types = Vec::new();
        types.extend(std::iter::repeat_n(ActivityType::Military, mil as usize));
        types.extend(std::iter::repeat_n(ActivityType::Competition, comp as usize));
        while (types.len() as u64) < per_bin {
            types.push(if rng.random_bool(0.5) { ActivityType::Career } else { ActivityType::Education });
        }
        types.shuffle(&mut rng);
        for t in types {
            let idx = out.len();
            let person = format!("P{}", rng.random_range(0..200));
            out.push(tuple(person, bin + rng.random_range(0..5), t, idx));
        }
    }
    (out, plan)
}

/// Persons with one Birth and a handful of activities at chosen ages, plus the
/// age-group histogram they must produce at `width`.
pub fn cohort_corpus(persons: usize, width: u32, seed: u64) -> (Vec<PersonTimeline>, BTreeMap<u32, [u64; 6]>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let choices = [
        (ActivityType::Education, 2usize, 6..25),
        (ActivityType::Career, 3, 20..65),
        (ActivityType::Movement, 4, 15..80),
        (ActivityType::Marriage, 5, 18..50),
        (ActivityType::Death, 1, 50..95),
    ];
    let mut expected: BTreeMap<u32, [u64; 6]> = BTreeMap::new();
    let mut timelines = Vec::new();
    for p in 0..persons {
        let person = format!("C{p}");
        let birth = rng.random_range(1800..1950);
        let mut tuples = vec![tuple(person.clone(), birth, ActivityType::Birth, 0)];
        expected.entry(0).or_default()[0] += 1;
        for _ in 0..rng.random_range(2..6) {
            let (activity, col, ages) = choices[rng.random_range(0..choices.len())].clone();
            let age: u32 = rng.random_range(ages);
            expected.entry(age / width * width).or_default()[col] += 1;
            tuples.push(tuple(person.clone(), birth + age as i32, activity, tuples.len()));
        }
        tuples.sort_by_key(|t| t.year);
        timelines.push(PersonTimeline { person, tuples });
    }
    (timelines, expected)
}

/// Births inside a continental box; education within about 2 degrees of the birthplace,
/// career 10 to 25 degrees of longitude away.
pub fn distance_corpus(persons: usize, seed: u64) -> Vec<PersonTimeline> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for p in 0..persons {
        let person = format!("D{p}");
        let (lat, lon) = (rng.random_range(30.0..45.0), rng.random_range(-120.0..-75.0));
        let at = |year: i32, activity: ActivityType, la: f64, lo: f64, idx| {
            let mut t = tuple(person.clone(), year, activity, idx);
            t.latitude = Some(la);
            t.longitude = Some(lo);
            t
        };
        let edu = at(
            1920,
            ActivityType::Education,
            lat + rng.random_range(-2.0..2.0),
            lon + rng.random_range(-2.0..2.0),
            1,
        );
        let sign = if lon < -97.5 { 1.0 } else { -1.0 };
        let career = at(
            1930,
            ActivityType::Career,
            lat + rng.random_range(-3.0..3.0),
            lon + sign * rng.random_range(10.0..25.0),
            2,
        );
        let birth = at(1900, ActivityType::Birth, lat, lon, 0);
        out.push(PersonTimeline {
            person,
            tuples: vec![birth, edu, career],
        });
    }
    out
}
