use crate::frame_io::GrayImage;

use super::fast::FastCorner;
use super::Keypoint;

pub const HARRIS_K: f64 = 0.04;
pub const HARRIS_BLOCK: usize = 7;

/// Harris corner response at `(x, y)` from Sobel gradients summed over a
/// 7x7 block. Gradients are scaled by `1 / (4 * 7 * 255)` so responses are
/// comparable across images; pixels outside the image are border-replicated.
pub fn harris_response(img: &GrayImage, x: usize, y: usize) -> f64 {
    let r = (HARRIS_BLOCK / 2) as isize;
    let (w, h) = img.dims();
    let interior = x > r as usize && y > r as usize && x + (r as usize) + 1 < w && y + (r as usize) + 1 < h;
    let (a, b, c) = if interior {
        structure_sums_interior(img.data(), w, x, y, r as usize)
    } else {
        structure_sums_clamped(img, x as isize, y as isize, r)
    };
    let scale = 1.0 / (4.0 * HARRIS_BLOCK as f64 * 255.0);
    let scale4 = scale.powi(4);
    let (a, b, c) = (a as f64, b as f64, c as f64);
    (a * b - c * c - HARRIS_K * (a + b) * (a + b)) * scale4
}

fn structure_sums_clamped(img: &GrayImage, cx: isize, cy: isize, r: isize) -> (i64, i64, i64) {
    let (mut a, mut b, mut c) = (0i64, 0i64, 0i64);
    for py in cy - r..=cy + r {
        for px in cx - r..=cx + r {
            let p = |dx: isize, dy: isize| img.get_clamped(px + dx, py + dy) as i64;
            let gx = (p(1, -1) + 2 * p(1, 0) + p(1, 1)) - (p(-1, -1) + 2 * p(-1, 0) + p(-1, 1));
            let gy = (p(-1, 1) + 2 * p(0, 1) + p(1, 1)) - (p(-1, -1) + 2 * p(0, -1) + p(1, -1));
            a += gx * gx;
            b += gy * gy;
            c += gx * gy;
        }
    }
    (a, b, c)
}

fn structure_sums_interior(data: &[u8], w: usize, cx: usize, cy: usize, r: usize) -> (i64, i64, i64) {
    let (mut a, mut b, mut c) = (0i64, 0i64, 0i64);
    for py in cy - r..=cy + r {
        let up = &data[(py - 1) * w..py * w];
        let mid = &data[py * w..(py + 1) * w];
        let down = &data[(py + 1) * w..(py + 2) * w];
        for px in cx - r..=cx + r {
            let (l, rr) = (px - 1, px + 1);
            let gx = (up[rr] as i32 + 2 * mid[rr] as i32 + down[rr] as i32)
                - (up[l] as i32 + 2 * mid[l] as i32 + down[l] as i32);
            let gy = (down[l] as i32 + 2 * down[px] as i32 + down[rr] as i32)
                - (up[l] as i32 + 2 * up[px] as i32 + up[rr] as i32);
            a += (gx * gx) as i64;
            b += (gy * gy) as i64;
            c += (gx * gy) as i64;
        }
    }
    (a, b, c)
}

/// Ranking order shared by every keypoint list: response descending, then
/// `(y, x)` ascending.
pub(crate) fn rank_order(a: (f64, usize, usize), b: (f64, usize, usize)) -> std::cmp::Ordering {
    b.0.total_cmp(&a.0).then(a.2.cmp(&b.2)).then(a.1.cmp(&b.1))
}

/// Scores each candidate with the Harris measure and keeps the best `n`.
pub(crate) fn retain_ranked(
    img: &GrayImage,
    candidates: &[FastCorner],
    n: usize,
) -> Vec<(usize, usize, f64)> {
    let mut scored: Vec<(f64, usize, usize)> = candidates
        .iter()
        .map(|c| (harris_response(img, c.x, c.y), c.x, c.y))
        .collect();
    scored.sort_by(|&a, &b| rank_order(a, b));
    scored.truncate(n);
    scored.into_iter().map(|(r, x, y)| (x, y, r)).collect()
}

/// Re-ranks FAST candidates by Harris response and keeps the top `n`. The
/// returned keypoints are on level 0 with orientation not yet assigned.
pub fn harris_retain(img: &GrayImage, candidates: &[FastCorner], n: usize) -> Vec<Keypoint> {
    retain_ranked(img, candidates, n)
        .into_iter()
        .map(|(x, y, response)| Keypoint {
            x: x as f64,
            y: y as f64,
            level: 0,
            response,
            orientation: 0.0,
        })
        .collect()
}
