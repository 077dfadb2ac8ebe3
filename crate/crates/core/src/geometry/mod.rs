//! Two-view geometry: normalized DLT homography, normalized 8-point
//! fundamental matrix, residuals, and seeded RANSAC.

use nalgebra::{DMatrix, Matrix3, Point2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

mod fundamental;
mod homography;
mod ransac;
mod residual;

pub use fundamental::eightpoint_fundamental;
pub use homography::dlt_homography;
pub use ransac::{ransac, RansacConfig};
pub use residual::{
    reproj_error_h, sampson_error_f, sampson_error_h, HomographyResidual, DEGENERATE_EPS,
};

pub type Point = Point2<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModelKind {
    Homography,
    Fundamental,
}

impl ModelKind {
    pub fn minimal_sample(self) -> usize {
        match self {
            ModelKind::Homography => 4,
            ModelKind::Fundamental => 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelEstimate {
    pub kind: ModelKind,
    pub matrix: Matrix3<f64>,
    /// indices into the correspondence list passed to [`ransac`]
    pub inliers: Vec<usize>,
    pub inlier_ratio: f64,
}

/// Formats a matrix as nine whitespace-separated reals, row-major.
pub fn format_matrix(m: &Matrix3<f64>) -> String {
    (0..3)
        .flat_map(|r| (0..3).map(move |c| (r, c)))
        .map(|(r, c)| format!("{:.17e}", m[(r, c)]))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Scales to unit Frobenius norm and flips the sign so the entry of largest
/// magnitude is positive.
pub(crate) fn canonicalize(m: Matrix3<f64>) -> Result<Matrix3<f64>> {
    let norm = m.norm();
    if !norm.is_finite() || norm < 1e-300 {
        return Err(Error::RankDeficient);
    }
    let mut m = m / norm;
    let mut largest = 0.0f64;
    for v in m.iter() {
        if v.abs() > largest.abs() {
            largest = *v;
        }
    }
    if largest < 0.0 {
        m = -m;
    }
    Ok(m)
}

/// Hartley normalization: translate the centroid to the origin and scale so
/// the mean distance from it is sqrt(2).
pub(crate) fn normalizing_transform(points: &[Point]) -> Result<Matrix3<f64>> {
    let n = points.len() as f64;
    let (mut cx, mut cy) = (0.0, 0.0);
    for p in points {
        cx += p.x;
        cy += p.y;
    }
    cx /= n;
    cy /= n;
    let mean_dist = points
        .iter()
        .map(|p| ((p.x - cx).powi(2) + (p.y - cy).powi(2)).sqrt())
        .sum::<f64>()
        / n;
    if !(mean_dist > 1e-12) {
        return Err(Error::Degenerate);
    }
    let s = std::f64::consts::SQRT_2 / mean_dist;
    Ok(Matrix3::new(s, 0.0, -s * cx, 0.0, s, -s * cy, 0.0, 0.0, 1.0))
}

#[inline]
pub(crate) fn apply(t: &Matrix3<f64>, p: &Point) -> Point {
    let v = t * Vector3::new(p.x, p.y, 1.0);
    Point::new(v.x / v.z, v.y / v.z)
}

/// Right singular vector for the smallest singular value of `a` (n x 9),
/// together with the ratio of the two smallest singular values to the
/// largest, used to detect rank deficiency.
pub(crate) fn null_vector(mut a: DMatrix<f64>) -> Result<(nalgebra::SVector<f64, 9>, f64)> {
    let cols = a.ncols();
    if a.nrows() < cols {
        // pad so the full right singular basis is returned
        a = a.resize_vertically(cols, 0.0);
    }
    let svd = a.try_svd(false, true, f64::EPSILON, 200).ok_or(Error::RankDeficient)?;
    let v_t = svd.v_t.as_ref().ok_or(Error::RankDeficient)?;
    let sv = &svd.singular_values;
    let mut order: Vec<usize> = (0..sv.len()).collect();
    order.sort_by(|&i, &j| sv[i].total_cmp(&sv[j]));
    let smallest = order[0];
    let second = order[1];
    let largest = sv[order[sv.len() - 1]];
    if !(largest > 0.0) {
        return Err(Error::RankDeficient);
    }
    let row = v_t.row(smallest);
    let mut out = nalgebra::SVector::<f64, 9>::zeros();
    for i in 0..9 {
        out[i] = row[i];
    }
    Ok((out, sv[second] / largest))
}

/// Twice the signed area of the triangle, compared against the side lengths.
pub(crate) fn collinear(a: &Point, b: &Point, c: &Point) -> bool {
    let ab = b - a;
    let ac = c - a;
    let cross = ab.x * ac.y - ab.y * ac.x;
    let scale = ab.norm() * ac.norm();
    scale < 1e-12 || cross.abs() <= 1e-9 * scale
}
