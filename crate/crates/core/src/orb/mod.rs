//! ORB features: scale pyramid, FAST-9 detection, Harris re-ranking,
//! intensity-centroid orientation and steered BRIEF descriptors.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame_io::GrayImage;

pub mod describe;
pub mod fast;
pub mod harris;
pub mod pyramid;

pub use describe::{assign_orientation, orientation_bin};
pub use fast::{detect_fast, FastCorner};
pub use harris::{harris_response, harris_retain};
pub use pyramid::{build_pyramid, PyramidLevel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OrbConfig {
    pub max_keypoints: usize,
    pub fast_threshold: u8,
    pub n_levels: usize,
    pub scale_factor: f64,
    pub patch_radius: usize,
    pub edge_margin: usize,
}

impl Default for OrbConfig {
    fn default() -> Self {
        Self {
            max_keypoints: 3000,
            fast_threshold: 7,
            n_levels: 8,
            scale_factor: 1.2,
            patch_radius: 15,
            edge_margin: 19,
        }
    }
}

impl OrbConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_keypoints == 0 {
            return Err(Error::InvalidConfig("max_keypoints must be >= 1".into()));
        }
        if self.fast_threshold == 0 {
            return Err(Error::InvalidConfig("fast_threshold must be in [1, 255]".into()));
        }
        if !(self.scale_factor > 1.0) || !self.scale_factor.is_finite() {
            return Err(Error::InvalidConfig("scale_factor must be > 1".into()));
        }
        if self.n_levels == 0 {
            return Err(Error::InvalidConfig("n_levels must be >= 1".into()));
        }
        if self.edge_margin < self.patch_radius + 1 {
            return Err(Error::InvalidConfig(
                "edge_margin must exceed patch_radius".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Keypoint {
    /// level-0 coordinates
    pub x: f64,
    pub y: f64,
    pub level: usize,
    /// Harris response on the keypoint's level
    pub response: f64,
    /// radians in [-pi, pi]
    pub orientation: f64,
}

/// 256-bit binary descriptor. Test `i` lives in bit `i % 64` of word `i / 64`,
/// so the little-endian byte view matches the usual 32-byte layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Descriptor(pub [u64; 4]);

impl Descriptor {
    #[inline]
    pub fn hamming(&self, other: &Descriptor) -> u32 {
        self.0
            .iter()
            .zip(other.0.iter())
            .map(|(a, b)| (a ^ b).count_ones())
            .sum()
    }

    pub fn to_bytes(&self) -> [u8; 32] {
        let mut out = [0u8; 32];
        for (chunk, w) in out.chunks_exact_mut(8).zip(self.0.iter()) {
            chunk.copy_from_slice(&w.to_le_bytes());
        }
        out
    }

    pub fn to_hex(&self) -> String {
        self.to_bytes().iter().fold(String::with_capacity(64), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DescriptorSet {
    pub keypoints: Vec<Keypoint>,
    pub descriptors: Vec<Descriptor>,
}

impl DescriptorSet {
    pub fn len(&self) -> usize {
        self.keypoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keypoints.is_empty()
    }

    /// One line per keypoint: `x y level response orientation hex`.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for (kp, d) in self.keypoints.iter().zip(&self.descriptors) {
            let _ = writeln!(
                out,
                "{:.4} {:.4} {} {:.9e} {:.6} {}",
                kp.x,
                kp.y,
                kp.level,
                kp.response,
                kp.orientation,
                d.to_hex()
            );
        }
        out
    }
}

/// Splits the keypoint budget across levels in proportion to level area.
/// Level 0 absorbs the rounding remainder.
fn level_quotas(levels: &[PyramidLevel], total: usize) -> Vec<usize> {
    let areas: Vec<f64> = levels
        .iter()
        .map(|l| (l.image.width() * l.image.height()) as f64)
        .collect();
    let sum: f64 = areas.iter().sum();
    let mut quotas: Vec<usize> = areas
        .iter()
        .map(|a| (total as f64 * a / sum).floor() as usize)
        .collect();
    let assigned: usize = quotas[1..].iter().sum();
    quotas[0] = total - assigned;
    quotas
}

fn extract_level(level: &PyramidLevel, quota: usize, cfg: &OrbConfig) -> Vec<(Keypoint, Descriptor)> {
    if quota == 0 {
        return Vec::new();
    }
    let img = &level.image;
    let (w, h) = img.dims();
    let m = cfg.edge_margin;
    let mut candidates: Vec<FastCorner> = detect_fast(img, cfg.fast_threshold)
        .into_iter()
        .filter(|c| c.x >= m && c.y >= m && c.x + m < w && c.y + m < h)
        .collect();
    // FAST scores are a coarse ranking; only the strongest 2n go on to Harris.
    if candidates.len() > 2 * quota {
        candidates.sort_by(|a, b| b.score.cmp(&a.score).then(a.y.cmp(&b.y)).then(a.x.cmp(&b.x)));
        candidates.truncate(2 * quota);
    }
    let kept = harris::retain_ranked(img, &candidates, quota);
    let positions: Vec<(usize, usize)> = kept.iter().map(|&(x, y, _)| (x, y)).collect();
    let angles = describe::orientations(img, &positions, cfg.patch_radius);
    let smoothed = describe::SmoothedImage::new(img);
    kept.iter()
        .zip(angles)
        .map(|(&(x, y, response), orientation)| {
            let descriptor = describe::descriptor_at(&smoothed, x, y, orientation);
            let (x0, y0) = level.to_level0(x as f64, y as f64);
            (
                Keypoint {
                    x: x0,
                    y: y0,
                    level: level.level,
                    response,
                    orientation,
                },
                descriptor,
            )
        })
        .collect()
}

/// Full ORB pipeline. Output is ordered by level, then response descending,
/// then `(y, x)`, and never holds more than `cfg.max_keypoints` features.
pub fn extract(img: &GrayImage, cfg: &OrbConfig) -> Result<DescriptorSet> {
    let levels = build_pyramid(img, cfg)?;
    let quotas = level_quotas(&levels, cfg.max_keypoints);
    let per_level: Vec<Vec<(Keypoint, Descriptor)>> = levels
        .par_iter()
        .zip(quotas.par_iter())
        .map(|(level, &quota)| extract_level(level, quota, cfg))
        .collect();
    let mut set = DescriptorSet::default();
    for (kp, d) in per_level.into_iter().flatten() {
        set.keypoints.push(kp);
        set.descriptors.push(d);
    }
    debug_assert!(set.len() <= cfg.max_keypoints);
    Ok(set)
}
