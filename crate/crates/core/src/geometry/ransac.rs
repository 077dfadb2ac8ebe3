use nalgebra::Matrix3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::homography::minimal_sample_degenerate;
use super::residual::{sampson_error_f, sampson_error_h, HomographyResidual};
use super::{dlt_homography, eightpoint_fundamental, ModelEstimate, ModelKind, Point};

/// Residual used to classify homography inliers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HomographyResidualKind {
    #[default]
    SymmetricTransfer,
    Sampson,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RansacConfig {
    /// inlier tolerance in pixels; residuals are compared against its square
    pub epsilon: f64,
    pub confidence: f64,
    pub max_iterations: usize,
    pub rng_seed: u64,
    pub homography_residual: HomographyResidualKind,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self {
            epsilon: 3.0,
            confidence: 0.99,
            max_iterations: 2000,
            rng_seed: 0,
            homography_residual: HomographyResidualKind::SymmetricTransfer,
        }
    }
}

impl RansacConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) {
            return Err(Error::InvalidConfig("epsilon must be > 0".into()));
        }
        if !(self.confidence > 0.0 && self.confidence < 1.0) {
            return Err(Error::InvalidConfig("confidence must be in (0, 1)".into()));
        }
        if self.max_iterations == 0 {
            return Err(Error::InvalidConfig("max_iterations must be >= 1".into()));
        }
        Ok(())
    }
}

/// Attempts at drawing a non-degenerate minimal sample per iteration.
const RESAMPLE_BUDGET: usize = 100;

enum Model {
    Homography(HomographyResidual, HomographyResidualKind),
    Fundamental(Matrix3<f64>),
}

impl Model {
    fn fit(kind: ModelKind, src: &[Point], dst: &[Point], hk: HomographyResidualKind) -> Result<Self> {
        match kind {
            ModelKind::Homography => {
                let h = dlt_homography(src, dst)?;
                let r = HomographyResidual::new(h).ok_or(Error::Degenerate)?;
                Ok(Model::Homography(r, hk))
            }
            ModelKind::Fundamental => Ok(Model::Fundamental(eightpoint_fundamental(src, dst)?)),
        }
    }

    #[inline]
    fn residual(&self, x: &Point, xp: &Point) -> f64 {
        match self {
            Model::Homography(r, HomographyResidualKind::SymmetricTransfer) => r.symmetric_transfer(x, xp),
            Model::Homography(r, HomographyResidualKind::Sampson) => sampson_error_h(&r.h, x, xp),
            Model::Fundamental(f) => sampson_error_f(f, x, xp),
        }
    }

    fn matrix(&self) -> Matrix3<f64> {
        match self {
            Model::Homography(r, _) => r.h,
            Model::Fundamental(f) => *f,
        }
    }

    fn inliers(&self, src: &[Point], dst: &[Point], threshold: f64) -> Vec<usize> {
        src.iter()
            .zip(dst)
            .enumerate()
            .filter(|(_, (x, xp))| self.residual(x, xp) <= threshold)
            .map(|(i, _)| i)
            .collect()
    }
}

fn sample_degenerate(kind: ModelKind, src: &[Point], dst: &[Point]) -> bool {
    match kind {
        ModelKind::Homography => minimal_sample_degenerate(src) || minimal_sample_degenerate(dst),
        ModelKind::Fundamental => {
            let coincident = |pts: &[Point]| {
                pts.iter().enumerate().any(|(i, a)| {
                    pts[i + 1..].iter().any(|b| (a - b).norm_squared() < 1e-12)
                })
            };
            coincident(src) || coincident(dst)
        }
    }
}

/// Iterations needed to draw an all-inlier sample with the given confidence.
fn adaptive_iterations(confidence: f64, inlier_fraction: f64, sample: usize, cap: usize) -> usize {
    if inlier_fraction >= 1.0 {
        return 1;
    }
    let good = inlier_fraction.powi(sample as i32);
    let denom = (1.0 - good).ln();
    if good <= 0.0 || denom >= 0.0 {
        return cap;
    }
    let n = ((1.0 - confidence).ln() / denom).ceil();
    if !n.is_finite() || n >= cap as f64 {
        cap
    } else {
        (n as usize).max(1)
    }
}

/// Seeded RANSAC over `src[i] <-> dst[i]`.
///
/// A correspondence is an inlier when its residual is at most `epsilon^2`.
/// The best minimal-sample model is re-fitted on its inliers and the inlier
/// set is recomputed under the re-fit; the re-fit is kept only if it supports
/// at least as many inliers as the sample model.
pub fn ransac(src: &[Point], dst: &[Point], kind: ModelKind, cfg: &RansacConfig) -> Result<ModelEstimate> {
    cfg.validate()?;
    if src.len() != dst.len() {
        return Err(Error::InvalidConfig(format!(
            "{} source points but {} destination points",
            src.len(),
            dst.len()
        )));
    }
    let n = src.len();
    let s = kind.minimal_sample();
    if n < s {
        return Err(Error::NotEnoughPoints { needed: s, got: n });
    }
    let threshold = cfg.epsilon * cfg.epsilon;
    let hk = cfg.homography_residual;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);

    let mut best: Option<(Model, Vec<usize>)> = None;
    let mut needed = cfg.max_iterations;
    let mut iteration = 0;
    let mut sample_src = Vec::with_capacity(s);
    let mut sample_dst = Vec::with_capacity(s);
    while iteration < needed {
        iteration += 1;
        let mut found = false;
        for _ in 0..RESAMPLE_BUDGET {
            let idx = rand::seq::index::sample(&mut rng, n, s);
            sample_src.clear();
            sample_dst.clear();
            for i in idx.iter() {
                sample_src.push(src[i]);
                sample_dst.push(dst[i]);
            }
            if !sample_degenerate(kind, &sample_src, &sample_dst) {
                found = true;
                break;
            }
        }
        if !found {
            continue;
        }
        let Ok(model) = Model::fit(kind, &sample_src, &sample_dst, hk) else {
            continue;
        };
        let inliers = model.inliers(src, dst, threshold);
        let best_count = best.as_ref().map_or(0, |(_, b)| b.len());
        if inliers.len() > best_count {
            let fraction = inliers.len() as f64 / n as f64;
            needed = adaptive_iterations(cfg.confidence, fraction, s, cfg.max_iterations);
            best = Some((model, inliers));
        }
    }

    let (model, inliers) = match best {
        Some((m, i)) if i.len() >= s => (m, i),
        _ => return Err(Error::NoConsensus(s)),
    };

    let in_src: Vec<Point> = inliers.iter().map(|&i| src[i]).collect();
    let in_dst: Vec<Point> = inliers.iter().map(|&i| dst[i]).collect();
    let (model, inliers) = match Model::fit(kind, &in_src, &in_dst, hk) {
        Ok(refit) => {
            let refit_inliers = refit.inliers(src, dst, threshold);
            if refit_inliers.len() >= inliers.len() {
                (refit, refit_inliers)
            } else {
                (model, inliers)
            }
        }
        Err(_) => (model, inliers),
    };

    Ok(ModelEstimate {
        kind,
        matrix: model.matrix(),
        inlier_ratio: inliers.len() as f64 / n as f64,
        inliers,
    })
}
