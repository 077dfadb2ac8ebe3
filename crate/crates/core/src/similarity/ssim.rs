use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame_io::GrayImage;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SsimConfig {
    /// Gaussian window side length
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
}

impl Default for SsimConfig {
    fn default() -> Self {
        Self {
            window: 11,
            sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
        }
    }
}

impl SsimConfig {
    pub fn c1(&self) -> f64 {
        (self.k1 * 255.0).powi(2)
    }

    pub fn c2(&self) -> f64 {
        (self.k2 * 255.0).powi(2)
    }

    pub fn validate(&self) -> Result<()> {
        if self.window == 0 || self.window % 2 == 0 {
            return Err(Error::InvalidConfig("ssim window must be odd and >= 1".into()));
        }
        if !(self.sigma > 0.0) {
            return Err(Error::InvalidConfig("ssim sigma must be > 0".into()));
        }
        Ok(())
    }

    pub(crate) fn kernel(&self) -> Vec<f64> {
        let r = (self.window / 2) as f64;
        let taps: Vec<f64> = (0..self.window)
            .map(|i| {
                let d = i as f64 - r;
                (-d * d / (2.0 * self.sigma * self.sigma)).exp()
            })
            .collect();
        let sum: f64 = taps.iter().sum();
        taps.into_iter().map(|t| t / sum).collect()
    }
}

/// Separable "valid" correlation: output is `(w - k + 1) x (h - k + 1)`.
fn filter_valid(src: &[f64], w: usize, h: usize, kernel: &[f64]) -> Vec<f64> {
    let k = kernel.len();
    let ow = w - k + 1;
    let oh = h - k + 1;
    let mut horiz = vec![0.0; ow * h];
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        for x in 0..ow {
            horiz[y * ow + x] = kernel.iter().zip(&row[x..x + k]).map(|(a, b)| a * b).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            let mut acc = 0.0;
            for (i, kv) in kernel.iter().enumerate() {
                acc += kv * horiz[(y + i) * ow + x];
            }
            out[y * ow + x] = acc;
        }
    }
    out
}

/// Mean structural similarity over all window positions that fit inside the
/// image (Gaussian-weighted local statistics, no padding).
pub fn ssim(reference: &GrayImage, target: &GrayImage, cfg: &SsimConfig) -> Result<f64> {
    cfg.validate()?;
    reference.ensure_same_dims(target)?;
    let (w, h) = reference.dims();
    if w < cfg.window || h < cfg.window {
        return Err(Error::ImageTooSmall {
            width: w,
            height: h,
            reason: format!("ssim needs at least {0}x{0}", cfg.window),
        });
    }
    let x: Vec<f64> = reference.data().iter().map(|&v| v as f64).collect();
    let y: Vec<f64> = target.data().iter().map(|&v| v as f64).collect();
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a * b).collect();
    let kernel = cfg.kernel();
    let mu_x = filter_valid(&x, w, h, &kernel);
    let mu_y = filter_valid(&y, w, h, &kernel);
    let e_xx = filter_valid(&xx, w, h, &kernel);
    let e_yy = filter_valid(&yy, w, h, &kernel);
    let e_xy = filter_valid(&xy, w, h, &kernel);
    let (c1, c2) = (cfg.c1(), cfg.c2());
    let n = mu_x.len();
    let total: f64 = (0..n)
        .map(|i| {
            let (mx, my) = (mu_x[i], mu_y[i]);
            let vx = e_xx[i] - mx * mx;
            let vy = e_yy[i] - my * my;
            let cov = e_xy[i] - mx * my;
            ((2.0 * mx * my + c1) * (2.0 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2))
        })
        .sum();
    Ok(total / n as f64)
}
