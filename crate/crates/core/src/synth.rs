//! Synthetic planar worlds: a seeded infinite texture viewed through scripted
//! homography camera motion, with hard scene cuts and accumulating drift.
//!
//! The texture is a blend of value noise and randomly shaded square cells,
//! which gives ORB plenty of repeatable corners. It is defined on the whole
//! plane, so warped frames have no borders.

use nalgebra::{Matrix3, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame_io::{FrameSequence, GrayImage};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Motion {
    /// translation in px/frame
    pub pan: [f64; 2],
    /// rotation about the frame centre in rad/frame
    pub rotate: f64,
    /// scale ratio per frame about the frame centre
    pub zoom: f64,
}

impl Default for Motion {
    fn default() -> Self {
        Self {
            pan: [0.0, 0.0],
            rotate: 0.0,
            zoom: 1.0,
        }
    }
}

impl Motion {
    /// Per-frame homography for a `width` x `height` frame.
    pub fn step_homography(&self, width: usize, height: usize) -> Matrix3<f64> {
        let (cx, cy) = ((width as f64 - 1.0) / 2.0, (height as f64 - 1.0) / 2.0);
        let (s, c) = self.rotate.sin_cos();
        let z = self.zoom;
        let rs = Matrix3::new(z * c, -z * s, 0.0, z * s, z * c, 0.0, 0.0, 0.0, 1.0);
        let to_centre = Matrix3::new(1.0, 0.0, cx, 0.0, 1.0, cy, 0.0, 0.0, 1.0);
        let from_centre = Matrix3::new(1.0, 0.0, -cx, 0.0, 1.0, -cy, 0.0, 0.0, 1.0);
        let pan = Matrix3::new(1.0, 0.0, self.pan[0], 0.0, 1.0, self.pan[1], 0.0, 0.0, 1.0);
        pan * to_centre * rs * from_centre
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Drift {
    /// standard deviation of the per-frame noise increment, intensity units
    pub noise_sigma_per_frame: f64,
    /// apply one more 3x3 box blur pass every this many frames
    pub blur_every: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Segment {
    pub texture_seed: u64,
    pub length: usize,
    #[serde(default)]
    pub motion: Motion,
    #[serde(default)]
    pub drift: Drift,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneScript {
    pub width: usize,
    pub height: usize,
    pub rng_seed: u64,
    pub segments: Vec<Segment>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub frame_index: usize,
    pub segment_id: usize,
    /// maps segment frame-0 pixel coordinates to this frame, row-major
    pub true_homography_to_segment_frame0: [[f64; 3]; 3],
    pub cumulative_noise_sigma: f64,
}

impl FrameRecord {
    pub fn homography(&self) -> Matrix3<f64> {
        let h = &self.true_homography_to_segment_frame0;
        Matrix3::from_fn(|r, c| h[r][c])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthManifest {
    pub script: SceneScript,
    pub frames: Vec<FrameRecord>,
}

pub const PRESET_WIDTH: usize = 320;
pub const PRESET_HEIGHT: usize = 240;
pub const PRESET_SEED: u64 = 20_240_917;

pub const PRESET_NAMES: [&str; 4] = ["static_drift", "pan_small", "transition_at(T)", "orbit_large"];

impl SceneScript {
    pub fn validate(&self) -> Result<()> {
        if self.width < 1 || self.height < 1 {
            return Err(Error::InvalidDimensions {
                width: self.width,
                height: self.height,
            });
        }
        if self.segments.is_empty() {
            return Err(Error::InvalidConfig("script has no segments".into()));
        }
        for (i, s) in self.segments.iter().enumerate() {
            let bad = |what: &str| Err(Error::InvalidConfig(format!("segment {i}: {what}")));
            if s.length < 1 {
                return bad("length must be at least 1");
            }
            if !(s.motion.zoom > 0.0 && s.motion.zoom.is_finite()) {
                return bad("zoom must be positive");
            }
            if !(s.motion.pan.iter().all(|v| v.is_finite()) && s.motion.rotate.is_finite()) {
                return bad("motion must be finite");
            }
            if !(s.drift.noise_sigma_per_frame >= 0.0 && s.drift.noise_sigma_per_frame.is_finite()) {
                return bad("noise sigma must be non-negative");
            }
            if s.drift.blur_every == Some(0) {
                return bad("blur_every must be at least 1");
            }
        }
        Ok(())
    }

    pub fn total_frames(&self) -> usize {
        self.segments.iter().map(|s| s.length).sum()
    }

    /// Canonical scripts. `transition_at(T)` takes its cut position in the
    /// name, e.g. `transition_at(100)`.
    pub fn preset(name: &str) -> Result<Self> {
        let seg = |texture_seed, length, motion, sigma| Segment {
            texture_seed,
            length,
            motion,
            drift: Drift {
                noise_sigma_per_frame: sigma,
                blur_every: None,
            },
        };
        let segments = match name {
            "static_drift" => vec![seg(11, 200, Motion::default(), 0.4)],
            "pan_small" => vec![seg(
                23,
                150,
                Motion {
                    pan: [1.0, 0.0],
                    ..Motion::default()
                },
                0.3,
            )],
            "orbit_large" => vec![seg(
                37,
                120,
                Motion {
                    pan: [1.5, 0.5],
                    rotate: 0.02,
                    zoom: 1.0,
                },
                0.2,
            )],
            _ => {
                let t = parse_transition(name).ok_or_else(|| Error::UnknownPreset(name.into()))?;
                vec![seg(11, t, Motion::default(), 0.4), seg(53, t, Motion::default(), 0.4)]
            }
        };
        let script = Self {
            width: PRESET_WIDTH,
            height: PRESET_HEIGHT,
            rng_seed: PRESET_SEED,
            segments,
        };
        script.validate()?;
        Ok(script)
    }
}

/// Accepts `transition_at(100)`, `transition_at:100` and `transition_at_100`.
fn parse_transition(name: &str) -> Option<usize> {
    let rest = name.strip_prefix("transition_at")?;
    let digits = rest
        .strip_prefix('(')
        .and_then(|r| r.strip_suffix(')'))
        .or_else(|| rest.strip_prefix(':'))
        .or_else(|| rest.strip_prefix('_'))?;
    digits.parse().ok().filter(|&t| t >= 1)
}

#[inline]
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed for per-frame randomness, independent of render order.
pub fn frame_seed(global_seed: u64, frame_index: usize) -> u64 {
    mix(global_seed ^ mix(frame_index as u64))
}

#[inline]
fn lattice_hash(seed: u64, i: i64, j: i64) -> u64 {
    mix(seed ^ mix((i as u64).wrapping_mul(0x1000_0000_01b3) ^ mix(j as u64)))
}

#[inline]
fn unit(h: u64) -> f64 {
    (h >> 11) as f64 / (1u64 << 53) as f64
}

const CELL: f64 = 9.0;

/// Seeded texture on the plane. Integer sample points are combined with
/// bilinear interpolation by [`Texture::sample`].
#[derive(Debug, Clone, Copy)]
pub struct Texture {
    seed: u64,
}

impl Texture {
    pub fn new(seed: u64) -> Self {
        Self { seed: mix(seed) }
    }

    fn value_noise(&self, x: f64, y: f64, spacing: f64, salt: u64) -> f64 {
        let (fx, fy) = (x / spacing, y / spacing);
        let (ix, iy) = (fx.floor(), fy.floor());
        let smooth = |t: f64| t * t * (3.0 - 2.0 * t);
        let (tx, ty) = (smooth(fx - ix), smooth(fy - iy));
        let (ix, iy) = (ix as i64, iy as i64);
        let s = self.seed ^ salt;
        let v = |a, b| unit(lattice_hash(s, ix + a, iy + b));
        let top = v(0, 0) * (1.0 - tx) + v(1, 0) * tx;
        let bottom = v(0, 1) * (1.0 - tx) + v(1, 1) * tx;
        top * (1.0 - ty) + bottom * ty
    }

    /// Texture intensity at an integer lattice point.
    pub fn texel(&self, i: i64, j: i64) -> f64 {
        let (x, y) = (i as f64, j as f64);
        let cell = unit(lattice_hash(
            self.seed ^ 0xc311,
            (x / CELL).floor() as i64,
            (y / CELL).floor() as i64,
        ));
        let coarse = self.value_noise(x, y, 23.0, 0x5a5a);
        let fine = self.value_noise(x, y, 5.0, 0xa5a5);
        255.0 * (0.62 * cell + 0.3 * coarse + 0.08 * fine)
    }

    /// Bilinear sample at a real-valued position.
    pub fn sample(&self, x: f64, y: f64) -> f64 {
        let (x0, y0) = (x.floor(), y.floor());
        let (ax, ay) = (x - x0, y - y0);
        let (i, j) = (x0 as i64, y0 as i64);
        let top = self.texel(i, j) * (1.0 - ax) + self.texel(i + 1, j) * ax;
        let bottom = self.texel(i, j + 1) * (1.0 - ax) + self.texel(i + 1, j + 1) * ax;
        top * (1.0 - ay) + bottom * ay
    }

    /// View of the texture through `h`, which maps texture coordinates to
    /// frame coordinates.
    pub fn render(&self, width: usize, height: usize, h: &Matrix3<f64>) -> Result<Vec<f64>> {
        let inv = h.try_inverse().ok_or(Error::Degenerate)?;
        let mut out = vec![0.0; width * height];
        out.par_chunks_mut(width).enumerate().for_each(|(y, row)| {
            for (x, v) in row.iter_mut().enumerate() {
                let p = inv * Vector3::new(x as f64, y as f64, 1.0);
                *v = self.sample(p.x / p.z, p.y / p.z);
            }
        });
        Ok(out)
    }

    /// Unwarped `width` x `height` view as an 8-bit image.
    pub fn image(&self, width: usize, height: usize) -> Result<GrayImage> {
        let data = self.render(width, height, &Matrix3::identity())?;
        GrayImage::new(width, height, quantize(&data))
    }
}

fn quantize(values: &[f64]) -> Vec<u8> {
    values.iter().map(|v| v.round().clamp(0.0, 255.0) as u8).collect()
}

/// Warps a finite image by `h` (source to destination) with bilinear
/// sampling and border replication.
pub fn warp(src: &GrayImage, h: &Matrix3<f64>) -> Result<GrayImage> {
    let (w, ht) = src.dims();
    let inv = h.try_inverse().ok_or(Error::Degenerate)?;
    let mut out = vec![0u8; w * ht];
    out.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
        for (x, v) in row.iter_mut().enumerate() {
            let p = inv * Vector3::new(x as f64, y as f64, 1.0);
            let (sx, sy) = (p.x / p.z, p.y / p.z);
            let (x0, y0) = (sx.floor(), sy.floor());
            let (ax, ay) = (sx - x0, sy - y0);
            let (i, j) = (x0 as isize, y0 as isize);
            let g = |a: isize, b: isize| src.get_clamped(i + a, j + b) as f64;
            let top = g(0, 0) * (1.0 - ax) + g(1, 0) * ax;
            let bottom = g(0, 1) * (1.0 - ax) + g(1, 1) * ax;
            *v = (top * (1.0 - ay) + bottom * ay).round().clamp(0.0, 255.0) as u8;
        }
    });
    GrayImage::new(w, ht, out)
}

/// One pass of a 3x3 box filter with clamped borders.
pub fn box_blur3(values: &[f64], width: usize, height: usize) -> Vec<f64> {
    let at = |x: isize, y: isize| {
        let x = x.clamp(0, width as isize - 1) as usize;
        let y = y.clamp(0, height as isize - 1) as usize;
        values[y * width + x]
    };
    let mut out = vec![0.0; values.len()];
    out.par_chunks_mut(width).enumerate().for_each(|(y, row)| {
        for (x, v) in row.iter_mut().enumerate() {
            let mut sum = 0.0;
            for dy in -1..=1 {
                for dx in -1..=1 {
                    sum += at(x as isize + dx, y as isize + dy);
                }
            }
            *v = sum / 9.0;
        }
    });
    out
}

fn matrix_rows(m: &Matrix3<f64>) -> [[f64; 3]; 3] {
    let mut rows = [[0.0; 3]; 3];
    for (r, row) in rows.iter_mut().enumerate() {
        for (c, v) in row.iter_mut().enumerate() {
            *v = m[(r, c)];
        }
    }
    rows
}

/// Renders every frame of `script` together with its ground truth.
///
/// Frame `t` of a segment shows the segment texture through `M^t`, where `M`
/// is the per-frame motion. Drift is a per-pixel random walk that restarts at
/// each segment: frame `t` carries the sum of `t` independent Gaussian
/// increments, so its noise has standard deviation `sigma * sqrt(t)`.
pub fn render(script: &SceneScript) -> Result<(FrameSequence, GroundTruthManifest)> {
    script.validate()?;
    let (w, h) = (script.width, script.height);
    let mut plan = Vec::with_capacity(script.total_frames());
    for (segment_id, seg) in script.segments.iter().enumerate() {
        let step = seg.motion.step_homography(w, h);
        let mut hom = Matrix3::identity();
        for t in 0..seg.length {
            plan.push((segment_id, t, hom));
            hom = step * hom;
        }
    }
    let clean: Vec<Vec<f64>> = plan
        .par_iter()
        .map(|&(sid, _, hom)| Texture::new(script.segments[sid].texture_seed).render(w, h, &hom))
        .collect::<Result<_>>()?;
    let increments: Vec<Option<Vec<f64>>> = plan
        .par_iter()
        .enumerate()
        .map(|(index, &(sid, t, _))| {
            let sigma = script.segments[sid].drift.noise_sigma_per_frame;
            if t == 0 || sigma == 0.0 {
                return None;
            }
            let mut rng = ChaCha8Rng::seed_from_u64(frame_seed(script.rng_seed, index));
            let normal = Normal::new(0.0, sigma).expect("sigma validated");
            Some((0..w * h).map(|_| normal.sample(&mut rng)).collect())
        })
        .collect();

    let mut images = Vec::with_capacity(plan.len());
    let mut records = Vec::with_capacity(plan.len());
    let mut drift = vec![0.0; w * h];
    for (index, ((&(sid, t, hom), base), inc)) in plan.iter().zip(&clean).zip(&increments).enumerate() {
        let seg = &script.segments[sid];
        if t == 0 {
            drift.iter_mut().for_each(|d| *d = 0.0);
        }
        if let Some(inc) = inc {
            drift.iter_mut().zip(inc).for_each(|(d, n)| *d += n);
        }
        let mut frame: Vec<f64> = base.iter().zip(&drift).map(|(b, d)| b + d).collect();
        if let Some(every) = seg.drift.blur_every {
            for _ in 0..t / every {
                frame = box_blur3(&frame, w, h);
            }
        }
        images.push(GrayImage::new(w, h, quantize(&frame))?);
        records.push(FrameRecord {
            frame_index: index,
            segment_id: sid,
            true_homography_to_segment_frame0: matrix_rows(&hom),
            cumulative_noise_sigma: seg.drift.noise_sigma_per_frame * (t as f64).sqrt(),
        });
    }
    let manifest = GroundTruthManifest {
        script: script.clone(),
        frames: records,
    };
    Ok((FrameSequence::from_images(images)?, manifest))
}
