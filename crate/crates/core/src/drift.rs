//! Drift diagnostics: inter-frame MSE at several lags and the radially
//! binned amplitude-spectrum difference between each frame and an anchor.

use std::io::Write;
use std::sync::Arc;

use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame_io::GrayImage;

pub const DEFAULT_LAGS: [usize; 4] = [1, 5, 10, 20];
pub const DEFAULT_BANDS: usize = 16;

/// Mean squared error with intensities scaled to [0, 1].
pub fn mse(a: &GrayImage, b: &GrayImage) -> Result<f64> {
    a.ensure_same_dims(b)?;
    let sum: u64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| {
            let d = x.abs_diff(y) as u64;
            d * d
        })
        .sum();
    Ok(sum as f64 / (a.data().len() as f64 * 255.0 * 255.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LagSeries {
    pub lag: usize,
    /// `mse[i]` compares frame `lag + i` with frame `i`
    pub mse: Vec<f64>,
    pub mean: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftReport {
    pub frames: usize,
    pub series: Vec<LagSeries>,
}

pub fn mse_drift(frames: &[GrayImage], lags: &[usize]) -> Result<DriftReport> {
    for &lag in lags {
        if lag == 0 || lag >= frames.len() {
            return Err(Error::OutOfRange {
                index: lag,
                len: frames.len(),
            });
        }
    }
    if let Some(first) = frames.first() {
        for f in &frames[1..] {
            first.ensure_same_dims(f)?;
        }
    }
    let series = lags
        .iter()
        .map(|&lag| {
            let mse: Vec<f64> = (lag..frames.len())
                .into_par_iter()
                .map(|t| mse(&frames[t], &frames[t - lag]).expect("dims checked"))
                .collect();
            let mean = mse.iter().sum::<f64>() / mse.len() as f64;
            let max = mse.iter().cloned().fold(0.0, f64::max);
            LagSeries { lag, mse, mean, max }
        })
        .collect();
    Ok(DriftReport {
        frames: frames.len(),
        series,
    })
}

impl DriftReport {
    pub fn write_csv(&self, mut out: impl Write) -> std::io::Result<()> {
        writeln!(out, "t,lag,mse")?;
        for s in &self.series {
            for (i, v) in s.mse.iter().enumerate() {
                writeln!(out, "{},{},{}", i + s.lag, s.lag, v)?;
            }
        }
        Ok(())
    }

    /// Whitespace-separated columns, one block per lag separated by two
    /// blank lines so each lag is addressable with gnuplot's `index`.
    pub fn write_gnuplot(&self, mut out: impl Write) -> std::io::Result<()> {
        writeln!(out, "# t mse")?;
        for (b, s) in self.series.iter().enumerate() {
            if b > 0 {
                writeln!(out, "\n")?;
            }
            writeln!(out, "# lag {}", s.lag)?;
            for (i, v) in s.mse.iter().enumerate() {
                writeln!(out, "{} {}", i + s.lag, v)?;
            }
        }
        Ok(())
    }
}

/// Mean spectral amplitude per radial band of a mean-subtracted frame.
///
/// Amplitudes are `|F| / (W * H)`. Band `b` covers normalised radial
/// frequency `[b, b + 1) * 0.5 / bands`, the last band closed at 0.5;
/// corner frequencies beyond 0.5 are ignored.
pub struct SpectrumAnalyzer {
    width: usize,
    height: usize,
    bands: usize,
    row_fft: Arc<dyn Fft<f64>>,
    col_fft: Arc<dyn Fft<f64>>,
    /// band of each frequency bin, or `usize::MAX` outside the disc
    bin_band: Vec<usize>,
    band_counts: Vec<usize>,
}

fn signed_freq(k: usize, n: usize) -> f64 {
    let k = if k > n / 2 { k as f64 - n as f64 } else { k as f64 };
    k / n as f64
}

impl SpectrumAnalyzer {
    pub fn new(width: usize, height: usize, bands: usize) -> Result<Self> {
        if bands == 0 {
            return Err(Error::InvalidConfig("bands must be at least 1".into()));
        }
        if width == 0 || height == 0 {
            return Err(Error::InvalidDimensions { width, height });
        }
        let mut planner = FftPlanner::new();
        let row_fft = planner.plan_fft_forward(width);
        let col_fft = planner.plan_fft_forward(height);
        let mut bin_band = vec![usize::MAX; width * height];
        let mut band_counts = vec![0; bands];
        for ky in 0..height {
            let fy = signed_freq(ky, height);
            for kx in 0..width {
                let fx = signed_freq(kx, width);
                let rho = (fx * fx + fy * fy).sqrt();
                if rho <= 0.5 {
                    let b = ((rho / 0.5 * bands as f64) as usize).min(bands - 1);
                    bin_band[ky * width + kx] = b;
                    band_counts[b] += 1;
                }
            }
        }
        Ok(Self {
            width,
            height,
            bands,
            row_fft,
            col_fft,
            bin_band,
            band_counts,
        })
    }

    pub fn band_edges(&self) -> Vec<f64> {
        (0..=self.bands).map(|b| 0.5 * b as f64 / self.bands as f64).collect()
    }

    pub fn amplitude_spectrum(&self, img: &GrayImage) -> Result<Vec<f64>> {
        let (w, h) = (self.width, self.height);
        if img.dims() != (w, h) {
            return Err(Error::DimensionMismatch {
                expected: (w, h),
                actual: img.dims(),
            });
        }
        let mean = img.data().iter().map(|&v| v as f64).sum::<f64>() / (w * h) as f64;
        let mut buf: Vec<Complex<f64>> = img.data().iter().map(|&v| Complex::new(v as f64 - mean, 0.0)).collect();
        self.row_fft.process(&mut buf);
        let mut cols = vec![Complex::new(0.0, 0.0); w * h];
        for y in 0..h {
            for x in 0..w {
                cols[x * h + y] = buf[y * w + x];
            }
        }
        self.col_fft.process(&mut cols);
        let norm = (w * h) as f64;
        let mut amp = vec![0.0; w * h];
        for x in 0..w {
            for y in 0..h {
                amp[y * w + x] = cols[x * h + y].norm() / norm;
            }
        }
        Ok(amp)
    }

    pub fn band_amplitudes(&self, img: &GrayImage) -> Result<Vec<f64>> {
        let amp = self.amplitude_spectrum(img)?;
        let mut sums = vec![0.0; self.bands];
        for (a, &b) in amp.iter().zip(&self.bin_band) {
            if b != usize::MAX {
                sums[b] += a;
            }
        }
        Ok(sums
            .iter()
            .zip(&self.band_counts)
            .map(|(&s, &n)| if n == 0 { 0.0 } else { s / n as f64 })
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumReport {
    pub anchor_index: usize,
    pub bands: usize,
    /// `bands + 1` edges in normalised frequency
    pub band_edges: Vec<f64>,
    /// one row per frame, `|band(frame) - band(anchor)|`
    pub matrix: Vec<Vec<f64>>,
}

pub fn spectrum_drift(frames: &[GrayImage], anchor: usize, bands: usize) -> Result<SpectrumReport> {
    let anchor_img = frames.get(anchor).ok_or(Error::OutOfRange {
        index: anchor,
        len: frames.len(),
    })?;
    let (w, h) = anchor_img.dims();
    let analyzer = SpectrumAnalyzer::new(w, h, bands)?;
    let per_frame: Vec<Vec<f64>> = frames
        .par_iter()
        .map(|f| analyzer.band_amplitudes(f))
        .collect::<Result<_>>()?;
    let base = &per_frame[anchor];
    let matrix = per_frame
        .iter()
        .map(|row| row.iter().zip(base).map(|(a, b)| (a - b).abs()).collect())
        .collect();
    Ok(SpectrumReport {
        anchor_index: anchor,
        bands,
        band_edges: analyzer.band_edges(),
        matrix,
    })
}

impl SpectrumReport {
    pub fn write_csv(&self, mut out: impl Write) -> std::io::Result<()> {
        writeln!(out, "frame,band_lo,band_hi,amp_diff")?;
        for (f, row) in self.matrix.iter().enumerate() {
            for (b, v) in row.iter().enumerate() {
                writeln!(out, "{},{},{},{}", f, self.band_edges[b], self.band_edges[b + 1], v)?;
            }
        }
        Ok(())
    }

    /// Grid layout for `splot ... with pm3d`: one block per frame, blocks
    /// separated by a blank line, columns frame, band centre, difference.
    pub fn write_gnuplot(&self, mut out: impl Write) -> std::io::Result<()> {
        writeln!(out, "# frame band_center amp_diff (anchor {})", self.anchor_index)?;
        for (f, row) in self.matrix.iter().enumerate() {
            if f > 0 {
                writeln!(out)?;
            }
            for (b, v) in row.iter().enumerate() {
                let centre = 0.5 * (self.band_edges[b] + self.band_edges[b + 1]);
                writeln!(out, "{f} {centre} {v}")?;
            }
        }
        Ok(())
    }
}

/// 5×5 box filter with wrap-around borders, rounded to the nearest integer.
pub fn box_blur5_periodic(img: &GrayImage) -> GrayImage {
    let (w, h) = img.dims();
    GrayImage::from_fn(w, h, |x, y| {
        let mut s = 0u32;
        for dy in 0..5 {
            let yy = (y + h * 3 + dy - 2) % h;
            for dx in 0..5 {
                let xx = (x + w * 3 + dx - 2) % w;
                s += img.get(xx, yy) as u32;
            }
        }
        ((s + 12) / 25) as u8
    })
    .expect("same dims")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn textured(w: usize, h: usize, seed: u64) -> GrayImage {
        crate::synth::Texture::new(seed).image(w, h).unwrap()
    }

    #[test]
    fn constant_sequence_has_zero_drift() {
        let frames = vec![GrayImage::filled(8, 8, 90).unwrap(); 25];
        let r = mse_drift(&frames, &DEFAULT_LAGS).unwrap();
        for s in &r.series {
            assert_eq!(s.mse.len(), 25 - s.lag);
            assert!(s.mse.iter().all(|&v| v == 0.0));
        }
        let sp = spectrum_drift(&frames, 0, DEFAULT_BANDS).unwrap();
        assert!(sp.matrix.iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn extremal_mse_is_one() {
        let frames = vec![GrayImage::filled(4, 3, 0).unwrap(), GrayImage::filled(4, 3, 255).unwrap()];
        let r = mse_drift(&frames, &[1]).unwrap();
        assert_eq!(r.series[0].mse, vec![1.0]);
    }

    #[test]
    fn bad_lags_and_anchor() {
        let frames = vec![GrayImage::filled(4, 4, 0).unwrap(); 3];
        assert!(mse_drift(&frames, &[3]).is_err());
        assert!(mse_drift(&frames, &[0]).is_err());
        assert!(spectrum_drift(&frames, 3, 4).is_err());
        assert!(spectrum_drift(&frames, 0, 0).is_err());
    }

    #[test]
    fn dc_offset_is_removed() {
        let a = GrayImage::from_fn(32, 24, |x, y| ((x * 5 + y * 3) % 100) as u8).unwrap();
        let b = GrayImage::from_fn(32, 24, |x, y| ((x * 5 + y * 3) % 100 + 40) as u8).unwrap();
        let r = spectrum_drift(&[a, b], 0, 8).unwrap();
        assert!(r.matrix[1].iter().all(|&v| v < 1e-9), "{:?}", r.matrix[1]);
    }

    #[test]
    fn single_cosine_lands_in_its_band() {
        // period 8 px along x: normalised frequency 0.125, band 2 of 8
        let img = GrayImage::from_fn(64, 64, |x, _| {
            (128.0 + 100.0 * (2.0 * std::f64::consts::PI * x as f64 / 8.0).cos()).round() as u8
        })
        .unwrap();
        let an = SpectrumAnalyzer::new(64, 64, 8).unwrap();
        let bands = an.band_amplitudes(&img).unwrap();
        let peak = bands.iter().cloned().enumerate().fold((0, 0.0), |m, (i, v)| if v > m.1 { (i, v) } else { m });
        assert_eq!(peak.0, 2, "{bands:?}");
    }

    /// Seeded uniform noise: flat expected spectrum, so the absolute band
    /// difference after blurring follows the box filter's attenuation.
    fn white(w: usize, h: usize, seed: u64) -> GrayImage {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        GrayImage::from_fn(w, h, |_, _| rng.gen()).unwrap()
    }

    #[test]
    fn box_blur_hits_high_bands_hardest() {
        let a = white(128, 96, 5);
        let b = box_blur5_periodic(&a);
        let r = spectrum_drift(&[a, b], 0, DEFAULT_BANDS).unwrap();
        let row = &r.matrix[1];
        let third = DEFAULT_BANDS / 3;
        let low = row[..third].iter().cloned().fold(0.0, f64::max);
        let high = row[DEFAULT_BANDS - third..].iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(high > low, "{row:?}");
    }

    #[test]
    fn csv_layouts() {
        let frames = vec![textured(16, 16, 1), textured(16, 16, 2), textured(16, 16, 3)];
        let mut out = Vec::new();
        mse_drift(&frames, &[1, 2]).unwrap().write_csv(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "t,lag,mse");
        assert_eq!(lines.len(), 1 + 2 + 1);
        assert!(lines[1].starts_with("1,1,"));
        assert!(lines[3].starts_with("2,2,"));
        let mut out = Vec::new();
        spectrum_drift(&frames, 1, 4).unwrap().write_csv(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert_eq!(text.lines().count(), 1 + 3 * 4);
        assert_eq!(text.lines().nth(5).unwrap(), "1,0,0.125,0");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn mse_is_symmetric(seed_a in any::<u64>(), seed_b in any::<u64>()) {
            let a = textured(20, 14, seed_a);
            let b = textured(20, 14, seed_b);
            prop_assert_eq!(mse(&a, &b).unwrap(), mse(&b, &a).unwrap());
            prop_assert!(mse(&a, &b).unwrap() >= 0.0);
        }

        #[test]
        fn spectrum_ignores_periodic_shifts(seed in any::<u64>(), dx in 0usize..24, dy in 0usize..16, bands in 1usize..20) {
            let a = textured(24, 16, seed);
            let b = textured(24, 16, seed ^ 0x5555);
            let shift = |img: &GrayImage| GrayImage::from_fn(24, 16, |x, y| img.get((x + dx) % 24, (y + dy) % 16)).unwrap();
            let r = spectrum_drift(&[a.clone(), b.clone()], 0, bands).unwrap();
            let s = spectrum_drift(&[shift(&a), shift(&b)], 0, bands).unwrap();
            for (u, v) in r.matrix.iter().flatten().zip(s.matrix.iter().flatten()) {
                prop_assert!((u - v).abs() < 1e-9);
            }
            prop_assert!(r.matrix[0].iter().all(|&v| v == 0.0));
        }
    }
}
