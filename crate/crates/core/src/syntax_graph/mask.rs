use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::syntax_graph::{TokenAlignment, TrajectorySubgraph};

/// One bit per encoder position, padding included.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MaskVector {
    pub bits: Vec<u8>,
}

impl MaskVector {
    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn count_ones(&self) -> usize {
        self.bits.iter().filter(|&&b| b == 1).count()
    }

    pub fn is_set(&self, i: usize) -> bool {
        self.bits.get(i) == Some(&1)
    }

    pub fn support(&self) -> impl Iterator<Item = usize> + '_ {
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, &b)| b == 1)
            .map(|(i, _)| i)
    }
}

/// Mark subgraph tokens with 1. Markers copy the bit of their entity's first subword.
pub fn make_mask(
    subgraph: &TrajectorySubgraph,
    alignment: &TokenAlignment,
    padded_length: usize,
) -> Result<MaskVector> {
    if padded_length < alignment.len() {
        return Err(Error::Contract(format!(
            "padded length {padded_length} shorter than {} tokens",
            alignment.len()
        )));
    }
    let mut bits = vec![0u8; padded_length];
    for &n in &subgraph.nodes {
        if n < alignment.len() {
            bits[n] = 1;
        }
    }
    for &(marker, pos) in &alignment.markers {
        if let Some(anchor) = alignment.entity_anchor(marker.role()) {
            bits[pos] = bits[anchor];
        }
    }
    Ok(MaskVector { bits })
}
