use crate::error::{Error, Result};
use crate::frame_io::GrayImage;

/// Cosine of the angle between the mean-centred intensity vectors.
///
/// Sums are accumulated in integers (`n * sum(xy) - sum(x) * sum(y)` and the
/// matching variances), so identical inputs give exactly 1.
pub fn cosine(reference: &GrayImage, target: &GrayImage) -> Result<f64> {
    reference.ensure_same_dims(target)?;
    let n = reference.data().len() as i128;
    let (mut sx, mut sy, mut sxx, mut syy, mut sxy) = (0i128, 0i128, 0i128, 0i128, 0i128);
    for (&a, &b) in reference.data().iter().zip(target.data()) {
        let (a, b) = (a as i128, b as i128);
        sx += a;
        sy += b;
        sxx += a * a;
        syy += b * b;
        sxy += a * b;
    }
    let vx = n * sxx - sx * sx;
    let vy = n * syy - sy * sy;
    if vx == 0 || vy == 0 {
        return Err(Error::ZeroVariance);
    }
    let cov = n * sxy - sx * sy;
    let value = cov as f64 / ((vx as f64) * (vy as f64)).sqrt();
    Ok(value.clamp(-1.0, 1.0))
}
