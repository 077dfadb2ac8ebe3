use nalgebra::{DMatrix, Matrix3};

use crate::error::{Error, Result};

use super::{apply, canonicalize, normalizing_transform, null_vector, Point};

const RANK_TOL: f64 = 1e-10;

/// Zeroes the smallest singular value.
pub(crate) fn enforce_rank2(f: Matrix3<f64>) -> Result<Matrix3<f64>> {
    let mut svd = f.try_svd(true, true, f64::EPSILON, 200).ok_or(Error::RankDeficient)?;
    let sv = &mut svd.singular_values;
    let mut smallest = 0;
    for i in 1..3 {
        if sv[i] < sv[smallest] {
            smallest = i;
        }
    }
    sv[smallest] = 0.0;
    svd.recompose().map_err(|_| Error::RankDeficient)
}

/// Normalized 8-point estimate of `F` with `dst^T F src = 0`, rank 2 and unit
/// Frobenius norm.
pub fn eightpoint_fundamental(src: &[Point], dst: &[Point]) -> Result<Matrix3<f64>> {
    if src.len() != dst.len() {
        return Err(Error::InvalidConfig(format!(
            "{} source points but {} destination points",
            src.len(),
            dst.len()
        )));
    }
    if src.len() < 8 {
        return Err(Error::NotEnoughPoints {
            needed: 8,
            got: src.len(),
        });
    }
    let t1 = normalizing_transform(src)?;
    let t2 = normalizing_transform(dst)?;
    let mut a = DMatrix::<f64>::zeros(src.len(), 9);
    for (i, (p, q)) in src.iter().zip(dst).enumerate() {
        let p = apply(&t1, p);
        let q = apply(&t2, q);
        a.row_mut(i).copy_from_slice(&[
            q.x * p.x,
            q.x * p.y,
            q.x,
            q.y * p.x,
            q.y * p.y,
            q.y,
            p.x,
            p.y,
            1.0,
        ]);
    }
    let (f, second_ratio) = null_vector(a)?;
    if second_ratio < RANK_TOL {
        return Err(Error::RankDeficient);
    }
    let fn_ = enforce_rank2(Matrix3::from_row_slice(f.as_slice()))?;
    let f = t2.transpose() * fn_ * t1;
    canonicalize(enforce_rank2(f)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Rotation3, Vector3};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Two pinhole cameras looking at a random point cloud.
    fn two_view(n: usize, seed: u64) -> (Vec<Point>, Vec<Point>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = Matrix3::new(500.0, 0.0, 320.0, 0.0, 500.0, 240.0, 0.0, 0.0, 1.0);
        let r = Rotation3::from_euler_angles(0.05, -0.1, 0.03);
        let t = Vector3::new(0.4, 0.05, 0.1);
        let mut a = Vec::new();
        let mut b = Vec::new();
        for _ in 0..n {
            let x = Vector3::new(
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-1.5..1.5),
                rng.gen_range(4.0..9.0),
            );
            let p1 = k * x;
            let p2 = k * (r * x + t);
            a.push(Point::new(p1.x / p1.z, p1.y / p1.z));
            b.push(Point::new(p2.x / p2.z, p2.y / p2.z));
        }
        (a, b)
    }

    #[test]
    fn epipolar_constraint_holds_noise_free() {
        for seed in 0..10 {
            let (a, b) = two_view(20, seed);
            let f = eightpoint_fundamental(&a, &b).unwrap();
            // evaluate in Hartley-normalized coordinates
            let t1 = normalizing_transform(&a).unwrap();
            let t2 = normalizing_transform(&b).unwrap();
            let fn_ = t2.try_inverse().unwrap().transpose() * f * t1.try_inverse().unwrap();
            let fn_ = fn_ / fn_.norm();
            let worst = a
                .iter()
                .zip(&b)
                .map(|(p, q)| {
                    let (p, q) = (apply(&t1, p), apply(&t2, q));
                    (Vector3::new(q.x, q.y, 1.0).transpose() * fn_ * Vector3::new(p.x, p.y, 1.0))[0].abs()
                })
                .fold(0.0, f64::max);
            assert!(worst <= 1e-8, "seed {seed}: {worst}");
        }
    }

    #[test]
    fn output_has_rank_two() {
        let (a, b) = two_view(12, 3);
        let f = eightpoint_fundamental(&a, &b).unwrap();
        let sv = f.singular_values();
        let min = sv.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(min <= 1e-12, "{sv}");
        assert!((f.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn needs_eight_points() {
        let (a, b) = two_view(7, 1);
        assert!(matches!(
            eightpoint_fundamental(&a, &b),
            Err(Error::NotEnoughPoints { needed: 8, got: 7 })
        ));
    }

    #[test]
    fn planar_scene_is_rank_deficient() {
        let src: Vec<Point> = (0..10)
            .map(|i| Point::new((i * 37 % 11) as f64 * 20.0, (i * 53 % 7) as f64 * 30.0))
            .collect();
        let dst: Vec<Point> = src.iter().map(|p| Point::new(p.x + 5.0, p.y - 2.0)).collect();
        assert!(matches!(
            eightpoint_fundamental(&src, &dst),
            Err(Error::RankDeficient)
        ));
    }
}
