//! Frame-pair similarity. The primary score is the ORB viewpoint-overlap
//! score `max(r_H, r_F)`; SSIM and cosine similarity are available behind the
//! same interface for comparison.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame_io::GrayImage;
use crate::geometry::{ransac, ModelKind, Point, RansacConfig};
use crate::matching::{match_descriptors, CorrespondenceSet, MatcherConfig};
use crate::orb::{extract, DescriptorSet, OrbConfig};

mod cache;
mod cosine;
mod ssim;

pub use cache::{content_key, FeatureCache};
pub use cosine::cosine;
pub use ssim::{ssim, SsimConfig};

/// Pairs with fewer surviving matches are unreliable and score 0.
pub const MIN_MATCHES: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    #[default]
    #[serde(alias = "orb_geometric")]
    Orb,
    Ssim,
    Cosine,
}

impl Metric {
    /// Threshold conventionally paired with each metric.
    pub fn default_threshold(self) -> f64 {
        match self {
            Metric::Orb => 0.75,
            Metric::Ssim => 0.3,
            Metric::Cosine => 0.8,
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Metric::Orb => "orb",
            Metric::Ssim => "ssim",
            Metric::Cosine => "cosine",
        })
    }
}

impl std::str::FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "orb" | "orb_geometric" => Ok(Metric::Orb),
            "ssim" => Ok(Metric::Ssim),
            "cosine" => Ok(Metric::Cosine),
            other => Err(Error::InvalidConfig(format!("unknown metric {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ScoreStatus {
    #[serde(rename = "OK")]
    Ok,
    TooFewMatches,
    ModelFailure,
}

impl ScoreStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            ScoreStatus::Ok => "OK",
            ScoreStatus::TooFewMatches => "TooFewMatches",
            ScoreStatus::ModelFailure => "ModelFailure",
        }
    }
}

/// Result of one similarity evaluation.
///
/// For the ORB metric `value = max(r_h, r_f)` when the status is `OK` and 0
/// otherwise. For SSIM and cosine `value` is the raw metric and the ratio
/// fields are 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimilarityScore {
    pub value: f64,
    pub r_h: f64,
    pub r_f: f64,
    pub g: usize,
    pub status: ScoreStatus,
}

impl SimilarityScore {
    pub fn failed(status: ScoreStatus, g: usize) -> Self {
        Self {
            value: 0.0,
            r_h: 0.0,
            r_f: 0.0,
            g,
            status,
        }
    }

    fn raw(value: f64) -> Self {
        Self {
            value,
            r_h: 0.0,
            r_f: 0.0,
            g: 0,
            status: ScoreStatus::Ok,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricConfig {
    pub metric: Metric,
    pub orb: OrbConfig,
    pub matcher: MatcherConfig,
    pub ransac: RansacConfig,
    pub ssim: SsimConfig,
}

impl MetricConfig {
    pub fn validate(&self) -> Result<()> {
        self.orb.validate()?;
        self.matcher.validate()?;
        self.ransac.validate()?;
        self.ssim.validate()
    }
}

/// Scores a pair from already-extracted features. `reference` supplies the
/// match queries, so the score is directional.
pub fn score_features(reference: &DescriptorSet, target: &DescriptorSet, cfg: &MetricConfig) -> SimilarityScore {
    let matches = match_descriptors(reference, target, &cfg.matcher);
    score_matches(reference, target, &matches, cfg)
}

/// Geometric stage of [`score_features`]: RANSAC over given correspondences.
pub fn score_matches(
    reference: &DescriptorSet,
    target: &DescriptorSet,
    matches: &CorrespondenceSet,
    cfg: &MetricConfig,
) -> SimilarityScore {
    let g = matches.g();
    if g < MIN_MATCHES {
        return SimilarityScore::failed(ScoreStatus::TooFewMatches, g);
    }
    let to_point = |kp: &crate::orb::Keypoint| Point::new(kp.x, kp.y);
    let src: Vec<Point> = matches
        .pairs
        .iter()
        .map(|c| to_point(&reference.keypoints[c.ref_index]))
        .collect();
    let dst: Vec<Point> = matches
        .pairs
        .iter()
        .map(|c| to_point(&target.keypoints[c.tgt_index]))
        .collect();
    let ratio = |kind: ModelKind| -> Option<f64> {
        ransac(&src, &dst, kind, &cfg.ransac)
            .ok()
            .map(|est| est.inlier_ratio)
    };
    let (r_h, r_f) = rayon::join(|| ratio(ModelKind::Homography), || ratio(ModelKind::Fundamental));
    if r_h.is_none() && r_f.is_none() {
        return SimilarityScore::failed(ScoreStatus::ModelFailure, g);
    }
    let (r_h, r_f) = (r_h.unwrap_or(0.0), r_f.unwrap_or(0.0));
    SimilarityScore {
        value: r_h.max(r_f),
        r_h,
        r_f,
        g,
        status: ScoreStatus::Ok,
    }
}

/// ORB + RANSAC viewpoint-overlap score `s(reference, target)`, without
/// caching.
pub fn orb_similarity(reference: &GrayImage, target: &GrayImage, cfg: &MetricConfig) -> Result<SimilarityScore> {
    reference.ensure_same_dims(target)?;
    let (a, b) = rayon::join(|| extract(reference, &cfg.orb), || extract(target, &cfg.orb));
    Ok(score_features(&a?, &b?, cfg))
}

/// Metric evaluator with a per-frame feature cache.
pub struct Scorer {
    config: MetricConfig,
    cache: FeatureCache,
}

/// Default number of cached frames; comfortably above any preset window.
pub const DEFAULT_CACHE_CAPACITY: usize = 128;

impl Scorer {
    pub fn new(config: MetricConfig) -> Result<Self> {
        Self::with_capacity(config, DEFAULT_CACHE_CAPACITY)
    }

    pub fn with_capacity(config: MetricConfig, capacity: usize) -> Result<Self> {
        config.validate()?;
        let cache = FeatureCache::new(config.orb.clone(), capacity);
        Ok(Self { config, cache })
    }

    pub fn config(&self) -> &MetricConfig {
        &self.config
    }

    pub fn cache(&self) -> &FeatureCache {
        &self.cache
    }

    /// Scores `target` against `reference` with the configured metric.
    ///
    /// Errors only on dimension mismatch or images too small for the metric.
    /// A cosine evaluation on a flat image reports `ModelFailure` with value 0.
    pub fn score(&self, reference: &GrayImage, target: &GrayImage) -> Result<SimilarityScore> {
        reference.ensure_same_dims(target)?;
        match self.config.metric {
            Metric::Orb => {
                let (a, b) = rayon::join(
                    || self.cache.get_or_extract(reference),
                    || self.cache.get_or_extract(target),
                );
                Ok(score_features(&*a?, &*b?, &self.config))
            }
            Metric::Ssim => Ok(SimilarityScore::raw(ssim(reference, target, &self.config.ssim)?)),
            Metric::Cosine => match cosine(reference, target) {
                Ok(v) => Ok(SimilarityScore::raw(v)),
                Err(Error::ZeroVariance) => Ok(SimilarityScore::failed(ScoreStatus::ModelFailure, 0)),
                Err(e) => Err(e),
            },
        }
    }
}
