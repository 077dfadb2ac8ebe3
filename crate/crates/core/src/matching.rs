//! Brute-force Hamming matching with the two-nearest-neighbour ratio test.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::orb::{Descriptor, DescriptorSet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MatcherConfig {
    pub ratio_tau: f64,
    pub cross_check: bool,
}

impl Default for MatcherConfig {
    fn default() -> Self {
        Self {
            ratio_tau: 0.8,
            cross_check: false,
        }
    }
}

impl MatcherConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.ratio_tau > 0.0 && self.ratio_tau <= 1.0) {
            return Err(Error::InvalidConfig("ratio_tau must be in (0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Correspondence {
    pub ref_index: usize,
    pub tgt_index: usize,
    pub hamming: u32,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CorrespondenceSet {
    pub pairs: Vec<Correspondence>,
}

impl CorrespondenceSet {
    /// Number of surviving correspondences.
    pub fn g(&self) -> usize {
        self.pairs.len()
    }
}

/// Best and second-best distances from `query` into `pool`; equal distances
/// resolve to the lower index.
fn two_nearest(query: &Descriptor, pool: &[Descriptor]) -> (usize, u32, u32) {
    let (mut best_idx, mut best, mut second) = (0, u32::MAX, u32::MAX);
    for (j, d) in pool.iter().enumerate() {
        let dist = query.hamming(d);
        if dist < best {
            second = best;
            best = dist;
            best_idx = j;
        } else if dist < second {
            second = dist;
        }
    }
    (best_idx, best, second)
}

/// Matches reference descriptors (queries) against target descriptors.
///
/// A pair survives when `d1 < ratio_tau * d2`, strictly. If the target holds
/// exactly one descriptor there is no second neighbour and the pair is kept.
pub fn match_descriptors(
    reference: &DescriptorSet,
    target: &DescriptorSet,
    cfg: &MatcherConfig,
) -> CorrespondenceSet {
    let tgt = &target.descriptors;
    if tgt.is_empty() {
        return CorrespondenceSet::default();
    }
    let mut pairs: Vec<Correspondence> = reference
        .descriptors
        .par_iter()
        .enumerate()
        .filter_map(|(i, q)| {
            let (j, d1, d2) = two_nearest(q, tgt);
            let keep = tgt.len() == 1 || (d1 as f64) < cfg.ratio_tau * d2 as f64;
            keep.then_some(Correspondence {
                ref_index: i,
                tgt_index: j,
                hamming: d1,
            })
        })
        .collect();
    if cfg.cross_check {
        let refs = &reference.descriptors;
        pairs.retain(|c| two_nearest(&tgt[c.tgt_index], refs).0 == c.ref_index);
    }
    CorrespondenceSet { pairs }
}
