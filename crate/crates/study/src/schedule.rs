//! Two-block schedule. Block 1 is a seeded shuffle of the cases, each given
//! a method by a fair coin; block 2 is an independent shuffle in which every
//! case gets the other method. All draws come from one SplitMix64 stream:
//! shuffle 1, then one coin per block-1 position (top bit set means
//! synthetic), then shuffle 2. Shuffles are Fisher-Yates from the last
//! index down with `j = (next_u64 * (i + 1)) >> 64`.

use std::fmt;

use ccwsi_core::rng::{derive_seed, SplitMix64};
use serde::{Deserialize, Serialize};

use crate::error::StudyError;

const LABEL_KEY: u64 = 0x6c61_6265_6c73_2d31;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Traditional,
    Synthetic,
}

impl Method {
    pub fn alternate(self) -> Self {
        match self {
            Method::Traditional => Method::Synthetic,
            Method::Synthetic => Method::Traditional,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Traditional => "traditional",
            Method::Synthetic => "synthetic",
        })
    }
}

/// Server-side view of a scheduled item. Never sent to reviewers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReviewItem {
    pub position: usize,
    pub block: u8,
    pub case_id: String,
    pub method: Method,
    pub blinded_label: String,
}

/// What a reviewer's client receives.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlindedItem {
    pub position: usize,
    pub blinded_label: String,
    pub total: usize,
}

impl ReviewItem {
    pub fn blinded(&self, total: usize) -> BlindedItem {
        BlindedItem {
            position: self.position,
            blinded_label: self.blinded_label.clone(),
            total,
        }
    }
}

/// Opaque label for a position: a keyed hash of (seed, position), so it
/// carries no information about case, block or method.
pub fn blinded_label(seed: u64, position: usize) -> String {
    format!("{:016x}", derive_seed(seed ^ LABEL_KEY, position as u64))
}

pub fn generate_schedule(case_ids: &[String], seed: u64) -> Result<Vec<ReviewItem>, StudyError> {
    if case_ids.is_empty() {
        return Err(StudyError::EmptyCases);
    }
    let n = case_ids.len();
    let mut rng = SplitMix64::new(seed);
    let mut block1: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut block1);
    let mut first = vec![Method::Traditional; n];
    for &case in &block1 {
        if rng.next_bool() {
            first[case] = Method::Synthetic;
        }
    }
    let mut block2: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut block2);

    let items = block1
        .iter()
        .map(|&c| (1u8, c, first[c]))
        .chain(block2.iter().map(|&c| (2u8, c, first[c].alternate())))
        .enumerate()
        .map(|(position, (block, c, method))| ReviewItem {
            position,
            block,
            case_id: case_ids[c].clone(),
            method,
            blinded_label: blinded_label(seed, position),
        })
        .collect();
    Ok(items)
}
