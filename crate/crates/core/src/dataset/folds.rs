use std::collections::{BTreeMap, HashSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::TrajectorySample;
use crate::error::{Error, Result};

/// Assignment of every sample id to one of `k` folds.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub assignments: BTreeMap<String, usize>,
}

impl FoldPlan {
    pub fn fold_of(&self, id: &str) -> Option<usize> {
        self.assignments.get(id).copied()
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &f in self.assignments.values() {
            sizes[f] += 1;
        }
        sizes
    }

    /// (train, held-out) positions into `samples` for one fold.
    pub fn split(&self, samples: &[TrajectorySample], fold: usize) -> (Vec<usize>, Vec<usize>) {
        let mut train = Vec::new();
        let mut test = Vec::new();
        for (i, s) in samples.iter().enumerate() {
            if self.fold_of(&s.id) == Some(fold) {
                test.push(i);
            } else {
                train.push(i);
            }
        }
        (train, test)
    }
}

/// Stratified k-fold assignment.
///
/// Each label stratum is shuffled with the seeded RNG, strata are laid end to end in label
/// order, and position `p` goes to fold `p mod k`. Sizes therefore differ by at most one,
/// both per stratum and overall; strata smaller than `k` spread one sample per fold.
pub fn make_folds(samples: &[TrajectorySample], k: usize, seed: u64) -> Result<FoldPlan> {
    if k < 2 {
        return Err(Error::validation(format!("fold count must be at least 2, got {k}")));
    }
    let mut ids = HashSet::new();
    let mut strata: BTreeMap<usize, Vec<&str>> = BTreeMap::new();
    for s in samples {
        let label = s
            .label
            .ok_or_else(|| Error::validation(format!("sample {:?} has no label", s.id)))?;
        if !ids.insert(s.id.as_str()) {
            return Err(Error::validation(format!("duplicate sample id {:?}", s.id)));
        }
        strata.entry(label.id()).or_default().push(s.id.as_str());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assignments = BTreeMap::new();
    let mut position = 0usize;
    for (_, mut members) in strata {
        members.shuffle(&mut rng);
        for id in members {
            assignments.insert(id.to_string(), position % k);
            position += 1;
        }
    }
    Ok(FoldPlan { k, assignments })
}
