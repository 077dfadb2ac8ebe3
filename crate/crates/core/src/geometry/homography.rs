use nalgebra::{DMatrix, Matrix3};

use crate::error::{Error, Result};

use super::{apply, canonicalize, collinear, normalizing_transform, null_vector, Point};

/// Singular-value ratio below which the DLT system is treated as rank deficient.
const RANK_TOL: f64 = 1e-10;

/// True when the four points of a minimal sample contain a collinear triple.
pub(crate) fn minimal_sample_degenerate(points: &[Point]) -> bool {
    let n = points.len();
    for i in 0..n {
        for j in i + 1..n {
            for k in j + 1..n {
                if collinear(&points[i], &points[j], &points[k]) {
                    return true;
                }
            }
        }
    }
    false
}

/// Normalized direct linear transform for `dst ~ H src`.
///
/// Solved by SVD least squares on Hartley-normalized coordinates, then
/// denormalized and scaled to unit Frobenius norm with the largest-magnitude
/// entry positive.
pub fn dlt_homography(src: &[Point], dst: &[Point]) -> Result<Matrix3<f64>> {
    if src.len() != dst.len() {
        return Err(Error::InvalidConfig(format!(
            "{} source points but {} destination points",
            src.len(),
            dst.len()
        )));
    }
    if src.len() < 4 {
        return Err(Error::NotEnoughPoints {
            needed: 4,
            got: src.len(),
        });
    }
    if src.len() == 4 && (minimal_sample_degenerate(src) || minimal_sample_degenerate(dst)) {
        return Err(Error::Degenerate);
    }
    let t1 = normalizing_transform(src)?;
    let t2 = normalizing_transform(dst)?;
    let mut a = DMatrix::<f64>::zeros(2 * src.len(), 9);
    for (i, (p, q)) in src.iter().zip(dst).enumerate() {
        let p = apply(&t1, p);
        let q = apply(&t2, q);
        let (x, y, u, v) = (p.x, p.y, q.x, q.y);
        let r = 2 * i;
        a.row_mut(r)
            .copy_from_slice(&[0.0, 0.0, 0.0, -x, -y, -1.0, v * x, v * y, v]);
        a.row_mut(r + 1)
            .copy_from_slice(&[x, y, 1.0, 0.0, 0.0, 0.0, -u * x, -u * y, -u]);
    }
    let (h, second_ratio) = null_vector(a)?;
    if second_ratio < RANK_TOL {
        return Err(Error::RankDeficient);
    }
    let hn = Matrix3::from_row_slice(h.as_slice());
    let t2_inv = t2.try_inverse().ok_or(Error::Degenerate)?;
    let h = t2_inv * hn * t1;
    if h.determinant().abs() < 1e-300 {
        return Err(Error::Degenerate);
    }
    canonicalize(h)
}
