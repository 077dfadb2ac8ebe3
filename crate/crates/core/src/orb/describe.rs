//! Intensity-centroid orientation and steered BRIEF descriptors.

use std::f64::consts::PI;
use std::sync::LazyLock;

use crate::error::{Error, Result};
use crate::frame_io::GrayImage;

use super::Descriptor;

pub const ORIENTATION_BINS: usize = 30;
const BOX_RADIUS: isize = 2;

static PATTERN_SOURCE: &str = include_str!("../../data/orb_pattern_31.txt");

type TestPair = [(i8, i8); 2];

/// The 256 sampling pairs, parsed once from the checked-in table.
pub static PATTERN: LazyLock<Vec<TestPair>> = LazyLock::new(|| {
    let pairs: Vec<TestPair> = PATTERN_SOURCE
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| {
            let v: Vec<i8> = l
                .split_whitespace()
                .map(|t| t.parse().expect("integer in pattern table"))
                .collect();
            assert_eq!(v.len(), 4, "pattern line {l:?}");
            [(v[0], v[1]), (v[2], v[3])]
        })
        .collect();
    assert_eq!(pairs.len(), 256);
    pairs
});

/// Pattern rotated to each of the 30 orientation bins, offsets rounded to
/// whole pixels.
static STEERED: LazyLock<Vec<Vec<[(isize, isize); 2]>>> = LazyLock::new(|| {
    (0..ORIENTATION_BINS)
        .map(|bin| {
            let angle = bin as f64 * 2.0 * PI / ORIENTATION_BINS as f64;
            let (s, c) = angle.sin_cos();
            PATTERN
                .iter()
                .map(|pair| {
                    pair.map(|(x, y)| {
                        let (x, y) = (x as f64, y as f64);
                        ((x * c - y * s).round() as isize, (x * s + y * c).round() as isize)
                    })
                })
                .collect()
        })
        .collect()
});

/// Orientation bin for an angle in radians.
pub fn orientation_bin(theta: f64) -> usize {
    let step = 2.0 * PI / ORIENTATION_BINS as f64;
    let b = (theta / step).round() as i64;
    b.rem_euclid(ORIENTATION_BINS as i64) as usize
}

/// Half-widths of the circular patch for each row offset `0..=radius`.
fn circle_extent(radius: usize) -> Vec<usize> {
    let r2 = radius * radius;
    (0..=radius)
        .map(|dy| {
            let mut dx = 0;
            while (dx + 1) * (dx + 1) + dy * dy <= r2 {
                dx += 1;
            }
            dx
        })
        .collect()
}

/// Intensity-centroid orientation `atan2(m01, m10)` over the disc of the given
/// radius centred on `(x, y)`. Image y grows downwards, so a ramp increasing
/// along +y gives pi/2. A flat patch gives 0.
pub fn assign_orientation(img: &GrayImage, x: usize, y: usize, radius: usize) -> Result<f64> {
    if x < radius || y < radius || x + radius >= img.width() || y + radius >= img.height() {
        return Err(Error::PatchOutOfBounds { x, y, radius });
    }
    Ok(orientation_unchecked(img, x, y, &circle_extent(radius)))
}

fn orientation_unchecked(img: &GrayImage, x: usize, y: usize, extent: &[usize]) -> f64 {
    let radius = extent.len() - 1;
    let (mut m10, mut m01) = (0i64, 0i64);
    for dy in -(radius as isize)..=radius as isize {
        let half = extent[dy.unsigned_abs()] as isize;
        let row = img.row((y as isize + dy) as usize);
        for dx in -half..=half {
            let v = row[(x as isize + dx) as usize] as i64;
            m10 += dx as i64 * v;
            m01 += dy as i64 * v;
        }
    }
    (m01 as f64).atan2(m10 as f64)
}

/// Orientations for many keypoints on one image.
pub(crate) fn orientations(img: &GrayImage, points: &[(usize, usize)], radius: usize) -> Vec<f64> {
    let extent = circle_extent(radius);
    points
        .iter()
        .map(|&(x, y)| orientation_unchecked(img, x, y, &extent))
        .collect()
}

/// 5x5 box sums (not averaged; only comparisons matter) with border
/// replication, computed as separable running sums.
pub struct SmoothedImage {
    width: usize,
    height: usize,
    sums: Vec<u16>,
}

impl SmoothedImage {
    pub fn new(img: &GrayImage) -> Self {
        let (w, h) = img.dims();
        let r = BOX_RADIUS;
        let mut horizontal = vec![0u16; w * h];
        for (y, out) in horizontal.chunks_mut(w).enumerate() {
            let at = |x: isize| img.get_clamped(x, y as isize) as u16;
            let mut acc: u16 = (-r..=r).map(at).sum();
            for (x, o) in out.iter_mut().enumerate() {
                *o = acc;
                let x = x as isize;
                acc = acc + at(x + r + 1) - at(x - r);
            }
        }
        let mut sums = vec![0u16; w * h];
        for (y, out) in sums.chunks_mut(w).enumerate() {
            for dy in -r..=r {
                let sy = (y as isize + dy).clamp(0, h as isize - 1) as usize;
                let src = &horizontal[sy * w..(sy + 1) * w];
                for (o, &v) in out.iter_mut().zip(src) {
                    *o += v;
                }
            }
        }
        Self {
            width: w,
            height: h,
            sums,
        }
    }

    #[inline]
    fn get_clamped(&self, x: isize, y: isize) -> u16 {
        let x = x.clamp(0, self.width as isize - 1) as usize;
        let y = y.clamp(0, self.height as isize - 1) as usize;
        self.sums[y * self.width + x]
    }
}

/// Largest offset of any steered test point from the keypoint.
const PATTERN_REACH: usize = 19;

/// Computes the 256-bit steered descriptor at an integer position.
pub fn descriptor_at(smoothed: &SmoothedImage, x: usize, y: usize, orientation: f64) -> Descriptor {
    let pattern = &STEERED[orientation_bin(orientation)];
    let mut words = [0u64; 4];
    let (w, h) = (smoothed.width, smoothed.height);
    if x >= PATTERN_REACH && y >= PATTERN_REACH && x + PATTERN_REACH < w && y + PATTERN_REACH < h {
        let centre = (y * w + x) as isize;
        let sums = &smoothed.sums;
        let at = |(dx, dy): (isize, isize)| sums[(centre + dy * w as isize + dx) as usize];
        for (i, &[a, b]) in pattern.iter().enumerate() {
            words[i / 64] |= ((at(a) < at(b)) as u64) << (i % 64);
        }
    } else {
        for (i, [a, b]) in pattern.iter().enumerate() {
            let va = smoothed.get_clamped(x as isize + a.0, y as isize + a.1);
            let vb = smoothed.get_clamped(x as isize + b.0, y as isize + b.1);
            words[i / 64] |= ((va < vb) as u64) << (i % 64);
        }
    }
    Descriptor(words)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pattern_table_is_complete() {
        assert_eq!(PATTERN.len(), 256);
        assert_eq!(PATTERN[0], [(8, -3), (9, 5)]);
        assert_eq!(PATTERN[255], [(-1, -6), (0, -11)]);
        let max = PATTERN
            .iter()
            .flat_map(|p| p.iter().flat_map(|&(x, y)| [x.abs(), y.abs()]))
            .max()
            .unwrap();
        assert_eq!(max, 13);
    }

    #[test]
    fn flat_patch_has_zero_orientation() {
        let img = GrayImage::filled(41, 41, 100).unwrap();
        assert_eq!(assign_orientation(&img, 20, 20, 15).unwrap(), 0.0);
    }

    #[test]
    fn ramps_point_along_their_gradient() {
        let ramp_x = GrayImage::from_fn(41, 41, |x, _| (x * 5) as u8).unwrap();
        assert_eq!(assign_orientation(&ramp_x, 20, 20, 15).unwrap(), 0.0);
        let ramp_y = GrayImage::from_fn(41, 41, |_, y| (y * 5) as u8).unwrap();
        let theta = assign_orientation(&ramp_y, 20, 20, 15).unwrap();
        assert!((theta - PI / 2.0).abs() < 1e-12);
    }

    #[test]
    fn symmetric_patch_is_rotation_consistent() {
        // symmetric under 90 degree rotation about the centre: moments vanish
        let img = GrayImage::from_fn(41, 41, |x, y| {
            let (dx, dy) = (x as i32 - 20, y as i32 - 20);
            ((dx * dx + dy * dy) as u32 % 200) as u8
        })
        .unwrap();
        assert_eq!(assign_orientation(&img, 20, 20, 15).unwrap(), 0.0);
    }

    #[test]
    fn patch_must_fit() {
        let img = GrayImage::filled(41, 41, 1).unwrap();
        assert!(matches!(
            assign_orientation(&img, 10, 20, 15),
            Err(Error::PatchOutOfBounds { .. })
        ));
        assert!(assign_orientation(&img, 15, 15, 15).is_ok());
        assert!(assign_orientation(&img, 26, 20, 15).is_err());
    }

    #[test]
    fn bins_are_twelve_degrees() {
        let deg = PI / 180.0;
        assert_eq!(orientation_bin(0.0), 0);
        assert_eq!(orientation_bin(7.0 * deg), orientation_bin(17.0 * deg));
        assert_eq!(orientation_bin(-PI), orientation_bin(PI));
        assert_eq!(orientation_bin(-12.0 * deg), 29);
    }

    #[test]
    fn box_sums_match_direct_sum() {
        let img = GrayImage::from_fn(13, 9, |x, y| ((x * 31 + y * 17) % 251) as u8).unwrap();
        let sm = SmoothedImage::new(&img);
        for y in 0..9 {
            for x in 0..13 {
                let mut s = 0u16;
                for dy in -2..=2 {
                    for dx in -2..=2 {
                        s += img.get_clamped(x as isize + dx, y as isize + dy) as u16;
                    }
                }
                assert_eq!(sm.get_clamped(x as isize, y as isize), s);
            }
        }
    }

    #[test]
    fn same_bin_same_descriptor() {
        let img = GrayImage::from_fn(64, 64, |x, y| ((x * x + 3 * y * x + y) % 253) as u8).unwrap();
        let sm = SmoothedImage::new(&img);
        let deg = PI / 180.0;
        let a = descriptor_at(&sm, 32, 32, 7.0 * deg);
        let b = descriptor_at(&sm, 32, 32, 17.0 * deg);
        assert_eq!(a, b);
        assert_eq!(a.hamming(&b), 0);
        let c = descriptor_at(&sm, 32, 32, 90.0 * deg);
        assert_ne!(a, c);
    }

    #[test]
    fn steered_pattern_stays_within_reach() {
        for bin in STEERED.iter() {
            for pair in bin {
                for &(dx, dy) in pair {
                    assert!(dx.unsigned_abs() <= PATTERN_REACH && dy.unsigned_abs() <= PATTERN_REACH);
                }
            }
        }
    }

    #[test]
    fn interior_descriptor_matches_clamped_lookup() {
        let img = GrayImage::from_fn(64, 64, |x, y| ((x * 7 + y * y * 3) % 241) as u8).unwrap();
        let sm = SmoothedImage::new(&img);
        for bin in 0..ORIENTATION_BINS {
            let theta = bin as f64 * 2.0 * PI / ORIENTATION_BINS as f64;
            let mut words = [0u64; 4];
            for (i, [a, b]) in STEERED[bin].iter().enumerate() {
                if sm.get_clamped(30 + a.0, 33 + a.1) < sm.get_clamped(30 + b.0, 33 + b.1) {
                    words[i / 64] |= 1 << (i % 64);
                }
            }
            assert_eq!(descriptor_at(&sm, 30, 33, theta), Descriptor(words));
        }
    }
}
