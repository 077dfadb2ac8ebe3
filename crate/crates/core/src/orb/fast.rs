//! FAST-9 corner detection on the 16-pixel Bresenham circle of radius 3.

use rayon::prelude::*;

use crate::frame_io::GrayImage;

/// Circle offsets in clockwise order starting at 12 o'clock.
pub const CIRCLE: [(isize, isize); 16] = [
    (0, -3),
    (1, -3),
    (2, -2),
    (3, -1),
    (3, 0),
    (3, 1),
    (2, 2),
    (1, 3),
    (0, 3),
    (-1, 3),
    (-2, 2),
    (-3, 1),
    (-3, 0),
    (-3, -1),
    (-2, -2),
    (-1, -3),
];

pub const ARC_LENGTH: usize = 9;
const BORDER: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FastCorner {
    pub x: usize,
    pub y: usize,
    pub score: u32,
}

/// Linear offsets of the circle pixels for a row stride of `width`.
fn circle_offsets(width: usize) -> [isize; 16] {
    let mut off = [0isize; 16];
    for (o, &(dx, dy)) in off.iter_mut().zip(CIRCLE.iter()) {
        *o = dy * width as isize + dx;
    }
    off
}

/// Bit `k` set when a run of `ARC_LENGTH` members starts at circle index `k`.
#[inline]
fn arc_starts(mask: u32) -> u32 {
    let m = mask | (mask << 16);
    let mut r = m;
    for i in 1..ARC_LENGTH {
        r &= m >> i;
    }
    r & 0xffff
}

/// Circle positions on the run of `mask` members that contains an arc, or 0.
/// At most one run of nine or more fits on the circle.
#[inline]
fn arc_members(mask: u32) -> u32 {
    let starts = arc_starts(mask);
    let mut run = 0u32;
    for i in 0..ARC_LENGTH {
        run |= starts << i;
    }
    (run | (run >> 16)) & 0xffff
}

fn run_sum(mask: u32, diff: &[i32; 16]) -> u32 {
    let run = arc_members(mask);
    diff.iter()
        .enumerate()
        .map(|(k, &d)| d as u32 * ((run >> k) & 1))
        .sum()
}

#[inline]
fn score_at(data: &[u8], idx: usize, off: &[isize; 16], t: i32) -> u32 {
    let p = data[idx] as i32;
    let (hi, lo) = (p + t, p - t);
    let at = |k: usize| data[(idx as isize + off[k]) as usize] as i32;
    // Any run of nine covers one of {0, 8} and one of {4, 12}.
    let (n, e, s, w) = (at(0), at(4), at(8), at(12));
    let maybe_bright = (n > hi || s > hi) && (e > hi || w > hi);
    let maybe_dark = (n < lo || s < lo) && (e < lo || w < lo);
    if !maybe_bright && !maybe_dark {
        return 0;
    }
    let mut diff = [0i32; 16];
    let (mut bright, mut dark) = (0u32, 0u32);
    for (k, d) in diff.iter_mut().enumerate() {
        let v = at(k);
        *d = (v - p).abs();
        bright |= ((v > hi) as u32) << k;
        dark |= ((v < lo) as u32) << k;
    }
    if arc_starts(bright) != 0 {
        run_sum(bright, &diff)
    } else if arc_starts(dark) != 0 {
        run_sum(dark, &diff)
    } else {
        0
    }
}

/// Score of pixel `(x, y)`: the sum of absolute differences over its
/// contiguous arc of at least nine brighter or darker circle pixels, or 0
/// when the pixel is not a corner. The caller guarantees a 3 px border.
pub fn corner_score(img: &GrayImage, x: usize, y: usize, threshold: u8) -> u32 {
    let off = circle_offsets(img.width());
    score_at(img.data(), y * img.width() + x, &off, threshold as i32)
}

/// Dense FAST score map (0 where there is no corner).
///
/// Works a row at a time: the brighter/darker membership masks of every
/// pixel are built with one pass per circle position, and the arc test and
/// score are evaluated only for pixels whose masks contain an arc.
pub fn score_map(img: &GrayImage, threshold: u8) -> Vec<u32> {
    let (w, h) = img.dims();
    let mut scores = vec![0u32; w * h];
    if w <= 2 * BORDER || h <= 2 * BORDER {
        return scores;
    }
    let off = circle_offsets(w);
    let data = img.data();
    let inner = w - 2 * BORDER;
    scores
        .par_chunks_mut(w)
        .enumerate()
        .skip(BORDER)
        .take(h - 2 * BORDER)
        .for_each_init(
            || (vec![0u8; inner], vec![0u8; inner], vec![0u16; inner], vec![0u16; inner]),
            |(hi, lo, bright, dark), (y, row)| {
                let first = y * w + BORDER;
                let centre = &data[first..first + inner];
                for ((h, l), &p) in hi.iter_mut().zip(lo.iter_mut()).zip(centre) {
                    *h = p.saturating_add(threshold);
                    *l = p.saturating_sub(threshold);
                }
                bright.fill(0);
                dark.fill(0);
                for (k, &o) in off.iter().enumerate() {
                    let s = (first as isize + o) as usize;
                    let ring = &data[s..s + inner];
                    let lanes = bright.iter_mut().zip(dark.iter_mut()).zip(ring.iter().zip(hi.iter().zip(lo.iter())));
                    for ((b, d), (&v, (&h, &l))) in lanes {
                        *b |= ((v > h) as u16) << k;
                        *d |= ((v < l) as u16) << k;
                    }
                }
                // keep only the circle positions on a qualifying arc
                for (b, d) in bright.iter_mut().zip(dark.iter_mut()) {
                    let rb = arc_members(*b as u32);
                    let rd = arc_members(*d as u32);
                    *b = if rb != 0 { rb as u16 } else { rd as u16 };
                }
                // 16 * 255 fits in u16
                dark.fill(0);
                for (k, &o) in off.iter().enumerate() {
                    let s = (first as isize + o) as usize;
                    let ring = &data[s..s + inner];
                    for ((acc, &m), (&v, &p)) in dark.iter_mut().zip(bright.iter()).zip(ring.iter().zip(centre)) {
                        *acc += v.abs_diff(p) as u16 * ((m >> k) & 1);
                    }
                }
                for (o, &acc) in row[BORDER..BORDER + inner].iter_mut().zip(dark.iter()) {
                    *o = acc as u32;
                }
            },
        );
    scores
}

/// 3x3 non-maximum suppression. Ties are resolved in favour of the pixel that
/// comes first in raster order so the output is deterministic.
pub fn non_max_suppression(scores: &[u32], width: usize, height: usize) -> Vec<FastCorner> {
    let mut out = Vec::new();
    for y in 0..height {
        for x in 0..width {
            let s = scores[y * width + x];
            if s == 0 {
                continue;
            }
            let mut keep = true;
            'nbr: for dy in -1isize..=1 {
                for dx in -1isize..=1 {
                    if dx == 0 && dy == 0 {
                        continue;
                    }
                    let (nx, ny) = (x as isize + dx, y as isize + dy);
                    if nx < 0 || ny < 0 || nx >= width as isize || ny >= height as isize {
                        continue;
                    }
                    let n = scores[ny as usize * width + nx as usize];
                    let earlier = dy < 0 || (dy == 0 && dx < 0);
                    if n > s || (earlier && n == s) {
                        keep = false;
                        break 'nbr;
                    }
                }
            }
            if keep {
                out.push(FastCorner { x, y, score: s });
            }
        }
    }
    out
}

/// FAST-9/16 with SAD score and 3x3 non-maximum suppression, in raster order.
pub fn detect_fast(img: &GrayImage, threshold: u8) -> Vec<FastCorner> {
    let (w, h) = img.dims();
    let scores = score_map(img, threshold);
    non_max_suppression(&scores, w, h)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Straightforward re-derivation of FAST-9: try every start position and
    /// both polarities, take the best-scoring qualifying arc.
    fn oracle_score(img: &GrayImage, x: usize, y: usize, t: i32) -> u32 {
        let p = img.get(x, y) as i32;
        let vals: Vec<i32> = CIRCLE
            .iter()
            .map(|&(dx, dy)| img.get((x as isize + dx) as usize, (y as isize + dy) as usize) as i32)
            .collect();
        let mut best = 0u32;
        for brighter in [true, false] {
            let passes = |v: i32| if brighter { v > p + t } else { v < p - t };
            if vals.iter().all(|&v| passes(v)) {
                return vals.iter().map(|v| (v - p).unsigned_abs()).sum();
            }
            for start in 0..16 {
                if passes(vals[(start + 15) % 16]) || !passes(vals[start]) {
                    continue;
                }
                let mut len = 0;
                let mut sum = 0u32;
                while len < 16 && passes(vals[(start + len) % 16]) {
                    sum += (vals[(start + len) % 16] - p).unsigned_abs();
                    len += 1;
                }
                if len >= 9 {
                    best = best.max(sum);
                }
            }
        }
        best
    }

    fn oracle_detect(img: &GrayImage, t: i32) -> Vec<(usize, usize)> {
        let (w, h) = img.dims();
        let mut s = vec![0u32; w * h];
        for y in 3..h - 3 {
            for x in 3..w - 3 {
                s[y * w + x] = oracle_score(img, x, y, t);
            }
        }
        let mut out = vec![];
        for y in 0..h {
            for x in 0..w {
                let v = s[y * w + x];
                if v == 0 {
                    continue;
                }
                let mut ok = true;
                for ny in y.saturating_sub(1)..=(y + 1).min(h - 1) {
                    for nx in x.saturating_sub(1)..=(x + 1).min(w - 1) {
                        let n = s[ny * w + nx];
                        if (ny, nx) < (y, x) && n >= v || (ny, nx) > (y, x) && n > v {
                            ok = false;
                        }
                    }
                }
                if ok {
                    out.push((x, y));
                }
            }
        }
        out
    }

    fn square(size: usize, side: usize) -> GrayImage {
        let lo = (size - side) / 2;
        GrayImage::from_fn(size, size, |x, y| {
            if (lo..lo + side).contains(&x) && (lo..lo + side).contains(&y) {
                255
            } else {
                0
            }
        })
        .unwrap()
    }

    #[test]
    fn uniform_image_has_no_corners() {
        let img = GrayImage::filled(32, 32, 128).unwrap();
        assert!(detect_fast(&img, 7).is_empty());
    }

    #[test]
    fn bright_square_matches_oracle() {
        let img = square(21, 5);
        let got: Vec<(usize, usize)> = detect_fast(&img, 7).iter().map(|c| (c.x, c.y)).collect();
        let want = oracle_detect(&img, 7);
        assert_eq!(got, want);
        // Frozen from the oracle. Four corners plus two edge midpoints that
        // survive suppression because ties go to the earlier raster position.
        assert_eq!(want, vec![(8, 8), (10, 8), (12, 8), (8, 10), (8, 12), (12, 12)]);
    }

    #[test]
    fn threshold_above_contrast_finds_nothing() {
        assert!(detect_fast(&square(21, 5), 255).is_empty());
    }

    #[test]
    fn scores_match_oracle_on_noise() {
        let mut state = 99u64;
        let img = GrayImage::from_fn(40, 30, |_, _| {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state & 0xff) as u8
        })
        .unwrap();
        for t in [1u8, 7, 40] {
            for y in 3..27 {
                for x in 3..37 {
                    assert_eq!(corner_score(&img, x, y, t), oracle_score(&img, x, y, t as i32));
                }
            }
            let got: Vec<(usize, usize)> =
                detect_fast(&img, t).iter().map(|c| (c.x, c.y)).collect();
            assert_eq!(got, oracle_detect(&img, t as i32));
        }
    }
}
