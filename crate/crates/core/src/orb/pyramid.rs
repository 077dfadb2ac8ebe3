use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::frame_io::GrayImage;

use super::OrbConfig;

/// One level of the scale pyramid.
#[derive(Debug, Clone)]
pub struct PyramidLevel {
    pub level: usize,
    pub image: GrayImage,
    /// level-0 width / level width, and the same for heights
    pub scale_x: f64,
    pub scale_y: f64,
}

impl PyramidLevel {
    /// Maps a pixel position on this level back into level-0 coordinates
    /// (pixel-centre aligned, consistent with the resampling below).
    #[inline]
    pub fn to_level0(&self, x: f64, y: f64) -> (f64, f64) {
        if self.level == 0 {
            return (x, y);
        }
        ((x + 0.5) * self.scale_x - 0.5, (y + 0.5) * self.scale_y - 0.5)
    }
}

/// Size of level `level` for a level-0 dimension.
pub fn level_dim(dim: usize, scale_factor: f64, level: usize) -> usize {
    (dim as f64 / scale_factor.powi(level as i32) + 1e-9).floor() as usize
}

/// Builds the image pyramid. Level `L` has size `floor(dim / scale^L)`; the
/// pyramid stops at the first level that would be narrower than twice the
/// edge margin in either direction.
pub fn build_pyramid(img: &GrayImage, cfg: &OrbConfig) -> Result<Vec<PyramidLevel>> {
    cfg.validate()?;
    let min_dim = 2 * cfg.edge_margin;
    let (w0, h0) = img.dims();
    if w0 < min_dim || h0 < min_dim {
        return Err(Error::ImageTooSmall {
            width: w0,
            height: h0,
            reason: format!("both sides must be at least {min_dim} px (2 x edge margin)"),
        });
    }
    let mut levels = vec![PyramidLevel {
        level: 0,
        image: img.clone(),
        scale_x: 1.0,
        scale_y: 1.0,
    }];
    for level in 1..cfg.n_levels {
        let w = level_dim(w0, cfg.scale_factor, level);
        let h = level_dim(h0, cfg.scale_factor, level);
        if w < min_dim || h < min_dim {
            break;
        }
        let prev = &levels[level - 1].image;
        let image = resize_bilinear(prev, w, h);
        levels.push(PyramidLevel {
            level,
            image,
            scale_x: w0 as f64 / w as f64,
            scale_y: h0 as f64 / h as f64,
        });
    }
    Ok(levels)
}

const FRAC_BITS: u32 = 11;
const ONE: u32 = 1 << FRAC_BITS;

/// Pixel-centre aligned bilinear resize with 11-bit fixed-point weights.
pub fn resize_bilinear(src: &GrayImage, width: usize, height: usize) -> GrayImage {
    let sx = src.width() as f64 / width as f64;
    let sy = src.height() as f64 / height as f64;
    let taps = |i: usize, scale: f64, len: usize| {
        let f = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, len as f64 - 1.0);
        let i0 = f.floor() as usize;
        let i1 = (i0 + 1).min(len - 1);
        (i0, i1, ((f - i0 as f64) * ONE as f64).round() as u32)
    };
    let cols: Vec<(usize, usize, u32)> = (0..width).map(|x| taps(x, sx, src.width())).collect();
    let mut data = vec![0u8; width * height];
    data.par_chunks_mut(width).enumerate().for_each(|(y, out)| {
        let (y0, y1, wy) = taps(y, sy, src.height());
        let (r0, r1) = (src.row(y0), src.row(y1));
        for (o, &(x0, x1, wx)) in out.iter_mut().zip(&cols) {
            let top = r0[x0] as u32 * (ONE - wx) + r0[x1] as u32 * wx;
            let bottom = r1[x0] as u32 * (ONE - wx) + r1[x1] as u32 * wx;
            let v = (top * (ONE - wy) + bottom * wy + (1 << (2 * FRAC_BITS - 1))) >> (2 * FRAC_BITS);
            *o = v as u8;
        }
    });
    GrayImage::new(width, height, data).expect("resize keeps dimensions consistent")
}
