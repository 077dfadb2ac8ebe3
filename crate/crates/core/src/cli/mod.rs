//! Command-line front end. Every command resolves its settings as flags over
//! a JSON config file over a built-in preset and records the resolved form in
//! its output.
//!
//! Exit codes: 0 success, 1 similarity below threshold, 2 error.

use std::ffi::OsString;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::Value;

use crate::drift::{mse_drift, spectrum_drift};
use crate::error::{Error, Result};
use crate::eviction::{run_sequence, summarize, EvictionConfig, WindowMode};
use crate::frame_io::{load_frame, load_sequence, FrameSequence, GrayImage, DEFAULT_SEQUENCE_PATTERN};
use crate::similarity::{Metric, MetricConfig, Scorer};
use crate::synth::{self, GroundTruthManifest, SceneScript};

pub mod bench;

pub const SEED_ENV: &str = "STABLEWORLD_SEED";
pub const MANIFEST_FILE: &str = "manifest.json";

pub const EXIT_OK: i32 = 0;
pub const EXIT_BELOW_THRESHOLD: i32 = 1;
pub const EXIT_ERROR: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "stableworld", version, about = "Geometric frame similarity, dynamic frame eviction and drift diagnostics")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Score one frame pair; exits 1 when the score is below the threshold
    Similarity(SimilarityArgs),
    /// Stream a frame directory through the eviction engine and write its trace
    Evict(EvictArgs),
    /// Run the eviction engine once per threshold and compare retention
    Sweep(SweepArgs),
    /// Inter-frame MSE at several lags
    Drift(DriftArgs),
    /// Radially binned amplitude-spectrum difference against an anchor frame
    Spectrum(SpectrumArgs),
    /// Render a synthetic scene script to PGM frames plus a ground-truth manifest
    Synth(SynthArgs),
    /// Time the similarity pipeline per stage
    Bench(bench::BenchArgs),
    /// Print a resolved eviction config
    Config(ConfigArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SeriesFormat {
    Csv,
    Gnuplot,
    Json,
}

#[derive(Debug, Args)]
pub struct SeedArg {
    /// RNG seed; falls back to the config file, then $STABLEWORLD_SEED
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct SimilarityArgs {
    pub frame_a: PathBuf,
    pub frame_b: PathBuf,
    #[arg(long)]
    pub metric: Option<Metric>,
    /// defaults to the metric's conventional threshold
    #[arg(long)]
    pub theta: Option<f64>,
    /// metric config JSON
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub seed: SeedArg,
}

#[derive(Debug, Args)]
pub struct EngineArgs {
    #[arg(long, default_value = "matrix_game")]
    pub preset: String,
    /// eviction config JSON, merged over the preset
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub window: Option<usize>,
    #[arg(long)]
    pub earlier: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    pub checked: Option<Vec<usize>>,
    #[arg(long)]
    pub theta: Option<f64>,
    #[arg(long)]
    pub metric: Option<Metric>,
    #[arg(long)]
    pub frames_per_step: Option<usize>,
    #[arg(long)]
    pub chunk_len: Option<usize>,
    /// evict exactly before the first failing checked index
    #[arg(long)]
    pub no_refine: bool,
    #[command(flatten)]
    pub seed: SeedArg,
}

#[derive(Debug, Args)]
pub struct FramesArgs {
    #[arg(long)]
    pub frames: PathBuf,
    #[arg(long, default_value = DEFAULT_SEQUENCE_PATTERN)]
    pub pattern: String,
}

#[derive(Debug, Args)]
pub struct EvictArgs {
    #[command(flatten)]
    pub input: FramesArgs,
    #[command(flatten)]
    pub engine: EngineArgs,
    /// trace JSON path; the trace goes to stdout otherwise
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// summary JSON path
    #[arg(long)]
    pub summary: Option<PathBuf>,
    /// ground-truth manifest giving scene ids; defaults to manifest.json in the frame directory
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub input: FramesArgs,
    #[command(flatten)]
    pub engine: EngineArgs,
    #[arg(long, value_delimiter = ',', default_value = "0.35,0.55,0.75,0.95")]
    pub thetas: Vec<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DriftArgs {
    #[command(flatten)]
    pub input: FramesArgs,
    #[arg(long, value_delimiter = ',', default_value = "1,5,10,20")]
    pub lags: Vec<usize>,
    #[arg(long, value_enum, default_value = "csv")]
    pub format: SeriesFormat,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SpectrumArgs {
    #[command(flatten)]
    pub input: FramesArgs,
    #[arg(long, default_value_t = 0)]
    pub anchor: usize,
    #[arg(long, default_value_t = crate::drift::DEFAULT_BANDS)]
    pub bands: usize,
    #[arg(long, value_enum, default_value = "csv")]
    pub format: SeriesFormat,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// static_drift, pan_small, orbit_large or transition_at(T)
    #[arg(long, conflicts_with = "script")]
    pub preset: Option<String>,
    /// scene script JSON
    #[arg(long)]
    pub script: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub seed: SeedArg,
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// print every preset instead of one resolved config
    #[arg(long)]
    pub all: bool,
    #[command(flatten)]
    pub engine: EngineArgs,
    #[arg(long)]
    pub pretty: bool,
}

/// Parses `args` (program name first) and runs the command, returning the
/// process exit code. Errors are reported on stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_ERROR } else { EXIT_OK };
        }
    };
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_ERROR
        }
    }
}

fn dispatch(cmd: Command) -> Result<i32> {
    match cmd {
        Command::Similarity(a) => cmd_similarity(a),
        Command::Evict(a) => cmd_evict(a).map(|_| EXIT_OK),
        Command::Sweep(a) => cmd_sweep(a).map(|_| EXIT_OK),
        Command::Drift(a) => cmd_drift(a).map(|_| EXIT_OK),
        Command::Spectrum(a) => cmd_spectrum(a).map(|_| EXIT_OK),
        Command::Synth(a) => cmd_synth(a).map(|_| EXIT_OK),
        Command::Bench(a) => bench::cmd_bench(a).map(|_| EXIT_OK),
        Command::Config(a) => cmd_config(a).map(|_| EXIT_OK),
    }
}

fn read_json(path: &Path) -> Result<Value> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Recursively overlays `patch` onto `base`; objects merge key by key,
/// anything else replaces.
pub fn merge_json(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                merge_json(b.entry(k).or_insert(Value::Null), v);
            }
        }
        (b, p) => *b = p,
    }
}

fn env_seed() -> Result<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(s) => s
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| Error::InvalidConfig(format!("{SEED_ENV}={s:?} is not an unsigned integer"))),
        Err(_) => Ok(None),
    }
}

/// Seed to apply on top of a resolved config: the flag, else the env var
/// unless the config file already set one.
fn resolve_seed(flag: Option<u64>, file: Option<&Value>, pointer: &str) -> Result<Option<u64>> {
    if flag.is_some() {
        return Ok(flag);
    }
    if file.and_then(|f| f.pointer(pointer)).is_some() {
        return Ok(None);
    }
    env_seed()
}

fn overlay<T: Serialize + serde::de::DeserializeOwned>(base: &T, file: Option<&Value>) -> Result<T> {
    let mut v = serde_json::to_value(base)?;
    if let Some(f) = file {
        merge_json(&mut v, f.clone());
    }
    Ok(serde_json::from_value(v)?)
}

pub fn resolve_metric(args: &SimilarityArgs) -> Result<MetricConfig> {
    let file = args.config.as_deref().map(read_json).transpose()?;
    let mut cfg: MetricConfig = overlay(&MetricConfig::default(), file.as_ref())?;
    if let Some(m) = args.metric {
        cfg.metric = m;
    }
    if let Some(seed) = resolve_seed(args.seed.seed, file.as_ref(), "/ransac/rng_seed")? {
        cfg.ransac.rng_seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn resolve_engine(args: &EngineArgs) -> Result<EvictionConfig> {
    let file = args.config.as_deref().map(read_json).transpose()?;
    let mut cfg: EvictionConfig = overlay(&EvictionConfig::preset(&args.preset)?, file.as_ref())?;
    if let Some(n) = args.window {
        cfg.window_size = n;
    }
    if let Some(k) = args.earlier {
        cfg.earlier = k;
    }
    if let Some(c) = &args.checked {
        cfg.checked_indices = c.clone();
    }
    if let Some(t) = args.theta {
        cfg.theta = t;
    }
    if let Some(m) = args.metric {
        cfg.metric.metric = m;
    }
    if let Some(f) = args.frames_per_step {
        cfg.frames_per_step = f;
    }
    if let Some(c) = args.chunk_len {
        cfg.chunk_len = Some(c);
    }
    if args.no_refine {
        cfg.refine_failures = false;
    }
    if let Some(seed) = resolve_seed(args.seed.seed, file.as_ref(), "/metric/ransac/rng_seed")? {
        cfg.metric.ransac.rng_seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn stdout_err(e: io::Error) -> Error {
    Error::io("<stdout>", e)
}

/// Writes `body` to `path`, or to stdout when `path` is `None`.
fn emit(path: Option<&Path>, body: impl FnOnce(&mut dyn Write) -> io::Result<()>) -> Result<()> {
    match path {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            }
            let mut f = io::BufWriter::new(fs::File::create(p).map_err(|e| Error::io(p, e))?);
            body(&mut f).and_then(|_| f.flush()).map_err(|e| Error::io(p, e))
        }
        None => {
            let stdout = io::stdout();
            let mut lock = stdout.lock();
            body(&mut lock).and_then(|_| lock.flush()).map_err(stdout_err)
        }
    }
}

fn emit_json<T: Serialize>(path: Option<&Path>, value: &T, pretty: bool) -> Result<()> {
    let text = if pretty {
        serde_json::to_string_pretty(value)?
    } else {
        serde_json::to_string(value)?
    };
    emit(path, |w| writeln!(w, "{text}"))
}

/// Resolved settings of a series command: a `.config.json` sidecar next to a
/// file output, or a line on stderr when writing to stdout.
fn log_config<T: Serialize>(out: Option<&Path>, config: &T) -> Result<()> {
    let text = serde_json::to_string(config)?;
    match out {
        Some(p) => {
            let mut side = p.as_os_str().to_owned();
            side.push(".config.json");
            let side = PathBuf::from(side);
            fs::write(&side, format!("{text}\n")).map_err(|e| Error::io(&side, e))
        }
        None => {
            eprintln!("config: {text}");
            Ok(())
        }
    }
}

fn load_frames(input: &FramesArgs) -> Result<FrameSequence> {
    load_sequence(&input.frames, &input.pattern)
}

fn images(seq: &FrameSequence) -> Vec<GrayImage> {
    seq.iter().map(|f| f.image.clone()).collect()
}

#[derive(Serialize)]
struct SimilarityOutput<'a> {
    frame_a: &'a Path,
    frame_b: &'a Path,
    theta: f64,
    passed: bool,
    score: crate::similarity::SimilarityScore,
    config: &'a MetricConfig,
}

fn cmd_similarity(args: SimilarityArgs) -> Result<i32> {
    let cfg = resolve_metric(&args)?;
    let theta = args.theta.unwrap_or_else(|| cfg.metric.default_threshold());
    let a = load_frame(&args.frame_a)?;
    let b = load_frame(&args.frame_b)?;
    let score = Scorer::with_capacity(cfg.clone(), 2)?.score(&a, &b)?;
    let passed = score.value >= theta;
    emit_json(
        None,
        &SimilarityOutput {
            frame_a: &args.frame_a,
            frame_b: &args.frame_b,
            theta,
            passed,
            score,
            config: &cfg,
        },
        false,
    )?;
    Ok(if passed { EXIT_OK } else { EXIT_BELOW_THRESHOLD })
}

/// Scene id per frame from a ground-truth manifest, if one is available
/// and covers the sequence.
fn scene_labels(explicit: Option<&Path>, frames_dir: &Path, n: usize) -> Result<Option<Vec<usize>>> {
    let path = match explicit {
        Some(p) => p.to_owned(),
        None => {
            let p = frames_dir.join(MANIFEST_FILE);
            if !p.is_file() {
                return Ok(None);
            }
            p
        }
    };
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: GroundTruthManifest = serde_json::from_str(&text)?;
    if manifest.frames.len() != n {
        return Err(Error::InvalidConfig(format!(
            "manifest {} lists {} frames but the sequence has {n}",
            path.display(),
            manifest.frames.len()
        )));
    }
    Ok(Some(manifest.frames.iter().map(|r| r.segment_id).collect()))
}

fn human_summary(out: &mut dyn Write, cfg: &EvictionConfig, trace: &crate::eviction::EvictionTrace, summary: Option<&crate::eviction::TraceSummary>) -> io::Result<()> {
    writeln!(out, "steps: {}", trace.steps.len())?;
    let Some(s) = summary else {
        let merges = trace.steps.iter().filter_map(|s| s.merge.as_ref()).collect::<Vec<_>>();
        let merged = merges.iter().filter(|m| m.merged).count();
        return writeln!(out, "chunk merges: {merged} of {} comparisons", merges.len());
    };
    writeln!(out, "decisions: {}", s.decisions)?;
    if let Some(first) = trace.steps.first() {
        writeln!(
            out,
            "reference retention: {} held for {} of {} steps{}",
            first.pushed_payload_id,
            s.first_frame_retention,
            s.steps,
            if s.first_frame_retained_throughout { " (throughout)" } else { "" }
        )?;
    }
    writeln!(
        out,
        "mean reference tenure: {:.2} steps over {} reference frames",
        s.mean_reference_tenure,
        s.reference_tenures.len()
    )?;
    let hist: Vec<String> = s.rule_histogram.iter().map(|(k, v)| format!("{k}={v}")).collect();
    writeln!(out, "rules: {}", if hist.is_empty() { "none".into() } else { hist.join(" ") })?;
    let bound = (cfg.earlier + 1) * cfg.frames_per_step;
    for (cut, latency) in &s.flush_latencies {
        match latency {
            Some(l) => writeln!(out, "flush after cut at frame {cut}: {l} pushes (bound {bound})")?,
            None => writeln!(out, "flush after cut at frame {cut}: not flushed (bound {bound})")?,
        }
    }
    Ok(())
}

fn cmd_evict(args: EvictArgs) -> Result<()> {
    let cfg = resolve_engine(&args.engine)?;
    let seq = load_frames(&args.input)?;
    let engine = run_sequence(&cfg, seq.frames())?;
    let trace = engine.into_trace();
    let summary = if cfg.mode == WindowMode::Sliding {
        let labels = scene_labels(args.manifest.as_deref(), &args.input.frames, seq.len())?;
        Some(summarize(&trace, labels.as_deref())?)
    } else {
        None
    };
    emit_json(args.out.as_deref(), &trace, true)?;
    if let Some(p) = &args.summary {
        emit_json(Some(p), &summary, true)?;
    }
    let mut text = Vec::new();
    human_summary(&mut text, &cfg, &trace, summary.as_ref()).map_err(stdout_err)?;
    if args.out.is_some() {
        io::stdout().write_all(&text).map_err(stdout_err)?;
    } else {
        io::stderr().write_all(&text).map_err(stdout_err)?;
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub theta: f64,
    pub first_frame_retention: usize,
    pub mean_reference_tenure: f64,
    pub decisions: usize,
    pub all_passed: usize,
}

/// One engine run per threshold over the same frames.
pub fn theta_sweep(base: &EvictionConfig, seq: &FrameSequence, thetas: &[f64]) -> Result<Vec<SweepRow>> {
    if base.mode != WindowMode::Sliding {
        return Err(Error::InvalidConfig("sweep needs sliding mode".into()));
    }
    thetas
        .iter()
        .map(|&theta| {
            let cfg = EvictionConfig { theta, ..base.clone() };
            cfg.validate()?;
            let trace = run_sequence(&cfg, seq.frames())?.into_trace();
            let s = summarize(&trace, None)?;
            Ok(SweepRow {
                theta,
                first_frame_retention: s.first_frame_retention,
                mean_reference_tenure: s.mean_reference_tenure,
                decisions: s.decisions,
                all_passed: s.rule_histogram.get("AllPassed").copied().unwrap_or(0),
            })
        })
        .collect()
}

fn cmd_sweep(args: SweepArgs) -> Result<()> {
    let cfg = resolve_engine(&args.engine)?;
    let seq = load_frames(&args.input)?;
    let rows = theta_sweep(&cfg, &seq, &args.thetas)?;
    #[derive(Serialize)]
    struct Out<'a> {
        config: &'a EvictionConfig,
        rows: &'a [SweepRow],
    }
    emit_json(args.out.as_deref(), &Out { config: &cfg, rows: &rows }, true)
}

#[derive(Serialize)]
struct SeriesConfig<'a, T> {
    command: &'a str,
    frames: &'a Path,
    pattern: &'a str,
    #[serde(flatten)]
    params: T,
}

fn cmd_drift(args: DriftArgs) -> Result<()> {
    let seq = load_frames(&args.input)?;
    let report = mse_drift(&images(&seq), &args.lags)?;
    let out = args.out.as_deref();
    #[derive(Serialize)]
    struct P<'a> {
        lags: &'a [usize],
    }
    log_config(
        out,
        &SeriesConfig {
            command: "drift",
            frames: &args.input.frames,
            pattern: &args.input.pattern,
            params: P { lags: &args.lags },
        },
    )?;
    match args.format {
        SeriesFormat::Csv => emit(out, |w| report.write_csv(w)),
        SeriesFormat::Gnuplot => emit(out, |w| report.write_gnuplot(w)),
        SeriesFormat::Json => emit_json(out, &report, true),
    }
}

fn cmd_spectrum(args: SpectrumArgs) -> Result<()> {
    let seq = load_frames(&args.input)?;
    let report = spectrum_drift(&images(&seq), args.anchor, args.bands)?;
    let out = args.out.as_deref();
    #[derive(Serialize)]
    struct P {
        anchor: usize,
        bands: usize,
    }
    log_config(
        out,
        &SeriesConfig {
            command: "spectrum",
            frames: &args.input.frames,
            pattern: &args.input.pattern,
            params: P {
                anchor: args.anchor,
                bands: args.bands,
            },
        },
    )?;
    match args.format {
        SeriesFormat::Csv => emit(out, |w| report.write_csv(w)),
        SeriesFormat::Gnuplot => emit(out, |w| report.write_gnuplot(w)),
        SeriesFormat::Json => emit_json(out, &report, true),
    }
}

pub fn resolve_script(args: &SynthArgs) -> Result<SceneScript> {
    let (mut script, file) = match (&args.preset, &args.script) {
        (_, Some(path)) => {
            let v = read_json(path)?;
            (serde_json::from_value::<SceneScript>(v.clone())?, Some(v))
        }
        (Some(name), None) => (SceneScript::preset(name)?, None),
        (None, None) => return Err(Error::InvalidConfig("synth needs --preset or --script".into())),
    };
    if let Some(seed) = resolve_seed(args.seed.seed, file.as_ref(), "/rng_seed")? {
        script.rng_seed = seed;
    }
    script.validate()?;
    Ok(script)
}

fn cmd_synth(args: SynthArgs) -> Result<()> {
    let script = resolve_script(&args)?;
    let (seq, manifest) = synth::render(&script)?;
    seq.save_pgm_dir(&args.out)?;
    let path = args.out.join(MANIFEST_FILE);
    emit_json(Some(&path), &manifest, true)?;
    println!("wrote {} frames and {} to {}", seq.len(), MANIFEST_FILE, args.out.display());
    Ok(())
}

fn cmd_config(args: ConfigArgs) -> Result<()> {
    if args.all {
        let all: serde_json::Map<String, Value> = crate::eviction::PRESET_NAMES
            .iter()
            .map(|&n| Ok((n.to_owned(), serde_json::to_value(EvictionConfig::preset(n)?)?)))
            .collect::<Result<_>>()?;
        return emit_json(None, &all, args.pretty);
    }
    let cfg = resolve_engine(&args.engine)?;
    emit_json(None, &cfg, args.pretty)
}
