use nalgebra::{Matrix2, Matrix3, Vector2, Vector3};

use super::Point;

/// Denominators and homogeneous scales below this are treated as degenerate
/// and yield an infinite residual.
pub const DEGENERATE_EPS: f64 = 1e-12;

#[inline]
fn homog(p: &Point) -> Vector3<f64> {
    Vector3::new(p.x, p.y, 1.0)
}

/// First-order (Sampson) distance of `x <-> x'` to the epipolar constraint
/// `x'^T F x = 0`, in squared pixels.
pub fn sampson_error_f(f: &Matrix3<f64>, x: &Point, xp: &Point) -> f64 {
    let xh = homog(x);
    let xph = homog(xp);
    let fx = f * xh;
    let ftxp = f.transpose() * xph;
    let num = xph.dot(&fx);
    let den = fx.x * fx.x + fx.y * fx.y + ftxp.x * ftxp.x + ftxp.y * ftxp.y;
    if den < DEGENERATE_EPS {
        return f64::INFINITY;
    }
    num * num / den
}

/// Homography with its inverse cached for repeated symmetric-transfer
/// evaluation.
#[derive(Debug, Clone)]
pub struct HomographyResidual {
    pub h: Matrix3<f64>,
    pub h_inv: Matrix3<f64>,
}

impl HomographyResidual {
    pub fn new(h: Matrix3<f64>) -> Option<Self> {
        h.try_inverse().map(|h_inv| Self { h, h_inv })
    }

    #[inline]
    fn project(m: &Matrix3<f64>, p: &Point) -> Option<Point> {
        let v = m * homog(p);
        if v.z.abs() < DEGENERATE_EPS {
            return None;
        }
        Some(Point::new(v.x / v.z, v.y / v.z))
    }

    /// `|x' - pi(H x)|^2 + |x - pi(H^-1 x')|^2`
    #[inline]
    pub fn symmetric_transfer(&self, x: &Point, xp: &Point) -> f64 {
        match (Self::project(&self.h, x), Self::project(&self.h_inv, xp)) {
            (Some(fwd), Some(back)) => (xp - fwd).norm_squared() + (x - back).norm_squared(),
            _ => f64::INFINITY,
        }
    }
}

/// Symmetric transfer error under `H`; infinite when `H` is singular or a
/// point maps to infinity.
pub fn reproj_error_h(h: &Matrix3<f64>, x: &Point, xp: &Point) -> f64 {
    match HomographyResidual::new(*h) {
        Some(r) => r.symmetric_transfer(x, xp),
        None => f64::INFINITY,
    }
}

/// First-order geometric (Sampson) error of the two DLT equations for `H`.
pub fn sampson_error_h(h: &Matrix3<f64>, x: &Point, xp: &Point) -> f64 {
    let xh = homog(x);
    let h1 = h.row(0).transpose();
    let h2 = h.row(1).transpose();
    let h3 = h.row(2).transpose();
    let (a1, a2, a3) = (h1.dot(&xh), h2.dot(&xh), h3.dot(&xh));
    let e = Vector2::new(-a2 + xp.y * a3, a1 - xp.x * a3);
    // Jacobian with respect to (x, y, x', y')
    let j1 = [-h[(1, 0)] + xp.y * h[(2, 0)], -h[(1, 1)] + xp.y * h[(2, 1)], 0.0, a3];
    let j2 = [h[(0, 0)] - xp.x * h[(2, 0)], h[(0, 1)] - xp.x * h[(2, 1)], -a3, 0.0];
    let dot = |a: &[f64; 4], b: &[f64; 4]| a.iter().zip(b).map(|(u, v)| u * v).sum::<f64>();
    let jjt = Matrix2::new(dot(&j1, &j1), dot(&j1, &j2), dot(&j2, &j1), dot(&j2, &j2));
    if jjt.determinant().abs() < DEGENERATE_EPS * DEGENERATE_EPS {
        return f64::INFINITY;
    }
    match jjt.try_inverse() {
        Some(inv) => (e.transpose() * inv * e)[0],
        None => f64::INFINITY,
    }
}
