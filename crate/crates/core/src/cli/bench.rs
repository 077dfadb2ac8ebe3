//! Per-stage timing of the similarity pipeline on synthetic frame pairs.

use std::time::{Duration, Instant};

use clap::Args;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::frame_io::GrayImage;
use crate::matching::match_descriptors;
use crate::similarity::{score_matches, FeatureCache, MetricConfig};
use crate::synth::{warp, Motion, Texture};

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// frame size as WxH
    #[arg(long, default_value = "1280x720", value_parser = parse_size)]
    pub size: (usize, usize),
    #[arg(long, default_value_t = 5)]
    pub pairs: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub json: bool,
}

pub fn parse_size(s: &str) -> std::result::Result<(usize, usize), String> {
    let (w, h) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected WxH, got {s:?}"))?;
    let parse = |v: &str| v.trim().parse::<usize>().map_err(|e| format!("{v:?}: {e}"));
    Ok((parse(w)?, parse(h)?))
}

/// Cache state for one measurement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CacheMode {
    /// both frames extracted from scratch
    Cold,
    /// reference features cached, target extracted
    WarmReference,
    /// both frames cached; matching and RANSAC only
    WarmBoth,
}

#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct StageStats {
    pub median_ms: f64,
    pub p95_ms: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ModeReport {
    pub mode: CacheMode,
    pub extract: StageStats,
    #[serde(rename = "match")]
    pub matching: StageStats,
    pub ransac: StageStats,
    pub total: StageStats,
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchReport {
    pub width: usize,
    pub height: usize,
    pub pairs: usize,
    pub seed: u64,
    pub threads: usize,
    pub modes: Vec<ModeReport>,
}

impl BenchReport {
    pub fn mode(&self, mode: CacheMode) -> &ModeReport {
        self.modes.iter().find(|m| m.mode == mode).expect("every mode is measured")
    }
}

/// Nearest-rank percentile of `samples` in milliseconds.
fn percentile(sorted: &[f64], p: f64) -> f64 {
    let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

fn stats(samples: &[Duration]) -> StageStats {
    let mut ms: Vec<f64> = samples.iter().map(|d| d.as_secs_f64() * 1e3).collect();
    ms.sort_by(f64::total_cmp);
    StageStats {
        median_ms: percentile(&ms, 50.0),
        p95_ms: percentile(&ms, 95.0),
    }
}

/// Reference texture and a copy under a small camera motion.
pub fn bench_pair(width: usize, height: usize, seed: u64) -> Result<(GrayImage, GrayImage)> {
    let reference = Texture::new(seed).image(width, height)?;
    let motion = Motion {
        pan: [3.0, 1.0],
        rotate: 0.01,
        zoom: 1.0,
    };
    let target = warp(&reference, &motion.step_homography(width, height))?;
    Ok((reference, target))
}

#[derive(Default)]
struct Samples {
    extract: Vec<Duration>,
    matching: Vec<Duration>,
    ransac: Vec<Duration>,
    total: Vec<Duration>,
}

impl Samples {
    fn report(&self, mode: CacheMode) -> ModeReport {
        ModeReport {
            mode,
            extract: stats(&self.extract),
            matching: stats(&self.matching),
            ransac: stats(&self.ransac),
            total: stats(&self.total),
        }
    }
}

fn time_pair(cache: &FeatureCache, a: &GrayImage, b: &GrayImage, cfg: &MetricConfig, out: &mut Samples) -> Result<()> {
    let t0 = Instant::now();
    let (fa, fb) = rayon::join(|| cache.get_or_extract(a), || cache.get_or_extract(b));
    let (fa, fb) = (fa?, fb?);
    let t1 = Instant::now();
    let matches = match_descriptors(&fa, &fb, &cfg.matcher);
    let t2 = Instant::now();
    std::hint::black_box(score_matches(&fa, &fb, &matches, cfg));
    let t3 = Instant::now();
    out.extract.push(t1 - t0);
    out.matching.push(t2 - t1);
    out.ransac.push(t3 - t2);
    out.total.push(t3 - t0);
    Ok(())
}

pub fn run_bench(width: usize, height: usize, pairs: usize, seed: u64, cfg: &MetricConfig) -> Result<BenchReport> {
    if pairs == 0 {
        return Err(Error::InvalidConfig("pairs must be at least 1".into()));
    }
    cfg.validate()?;
    let frames: Vec<(GrayImage, GrayImage)> = (0..pairs as u64)
        .map(|i| bench_pair(width, height, seed.wrapping_add(i)))
        .collect::<Result<_>>()?;
    let (mut cold, mut warm_ref, mut warm_both) = (Samples::default(), Samples::default(), Samples::default());
    for (a, b) in &frames {
        let cache = FeatureCache::new(cfg.orb.clone(), 4);
        time_pair(&cache, a, b, cfg, &mut cold)?;
        time_pair(&cache, a, b, cfg, &mut warm_both)?;
        let cache = FeatureCache::new(cfg.orb.clone(), 4);
        cache.get_or_extract(a)?;
        time_pair(&cache, a, b, cfg, &mut warm_ref)?;
    }
    Ok(BenchReport {
        width,
        height,
        pairs,
        seed,
        threads: rayon::current_num_threads(),
        modes: vec![
            cold.report(CacheMode::Cold),
            warm_ref.report(CacheMode::WarmReference),
            warm_both.report(CacheMode::WarmBoth),
        ],
    })
}

pub(super) fn cmd_bench(args: BenchArgs) -> Result<()> {
    let seed = match args.seed {
        Some(s) => s,
        None => super::env_seed()?.unwrap_or(0),
    };
    let (w, h) = args.size;
    let report = run_bench(w, h, args.pairs, seed, &MetricConfig::default())?;
    if args.json {
        println!("{}", serde_json::to_string_pretty(&report)?);
        return Ok(());
    }
    println!(
        "{}x{}, {} pairs, seed {}, {} threads (median / p95 ms)",
        w, h, args.pairs, seed, report.threads
    );
    println!("{:<15} {:>17} {:>17} {:>17} {:>17}", "mode", "extract", "match", "ransac", "total");
    for m in &report.modes {
        let cell = |s: StageStats| format!("{:.1} / {:.1}", s.median_ms, s.p95_ms);
        let name = serde_json::to_value(m.mode)?.as_str().unwrap_or_default().to_owned();
        println!(
            "{:<15} {:>17} {:>17} {:>17} {:>17}",
            name,
            cell(m.extract),
            cell(m.matching),
            cell(m.ransac),
            cell(m.total)
        );
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sizes_parse() {
        assert_eq!(parse_size("1280x720"), Ok((1280, 720)));
        assert_eq!(parse_size("64X48"), Ok((64, 48)));
        assert!(parse_size("1280").is_err());
        assert!(parse_size("ax2").is_err());
    }

    #[test]
    fn nearest_rank() {
        let v: Vec<f64> = (1..=20).map(f64::from).collect();
        assert_eq!(percentile(&v, 50.0), 10.0);
        assert_eq!(percentile(&v, 95.0), 19.0);
        assert_eq!(percentile(&[3.0], 95.0), 3.0);
    }

    #[test]
    fn single_small_pair() {
        let r = run_bench(64, 64, 1, 3, &MetricConfig::default()).unwrap();
        assert_eq!(r.modes.len(), 3);
        for m in &r.modes {
            assert_eq!(m.total.median_ms, m.total.p95_ms);
        }
    }
}
