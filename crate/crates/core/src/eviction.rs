//! Dynamic frame eviction over a sliding window of frames.
//!
//! The window is split into the reference (slot 0), eviction candidates
//! (slots `1..=K`) and recent frames (slots above `K`, never evicted). When a
//! frame arrives at a full window, checked candidates are scored against the
//! reference in ascending order. If every score reaches `theta` the farthest
//! candidate `K` is evicted; otherwise the frame just before the first
//! failure goes.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::frame_io::{Frame, GrayImage};
use crate::similarity::{MetricConfig, Scorer, SimilarityScore};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowMode {
    #[default]
    Sliding,
    ChunkMerge,
}

/// Engine settings. In `Sliding` mode `earlier` is the slot index `K` of the
/// farthest eviction candidate and `checked_indices` are slot indices. In
/// `ChunkMerge` mode both count frames from 1 within a chunk, so `earlier`
/// is the number of leading frames carried into a merged window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvictionConfig {
    pub mode: WindowMode,
    pub window_size: usize,
    pub earlier: usize,
    pub checked_indices: Vec<usize>,
    pub theta: f64,
    pub frames_per_step: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub chunk_len: Option<usize>,
    /// On a failure at checked index `k*`, also score the unchecked slots
    /// between the last passing checked index and `k*` and evict before the
    /// first slot that actually fails.
    pub refine_failures: bool,
    pub metric: MetricConfig,
}

impl Default for EvictionConfig {
    fn default() -> Self {
        Self::matrix_game()
    }
}

pub const PRESET_NAMES: [&str; 3] = ["matrix_game", "open_oasis", "gamecraft"];
pub const DEFAULT_THETA: f64 = 0.75;

impl EvictionConfig {
    pub fn matrix_game() -> Self {
        Self {
            mode: WindowMode::Sliding,
            window_size: 9,
            earlier: 6,
            checked_indices: vec![3, 6],
            theta: DEFAULT_THETA,
            frames_per_step: 3,
            chunk_len: None,
            refine_failures: true,
            metric: MetricConfig::default(),
        }
    }

    pub fn open_oasis() -> Self {
        Self {
            window_size: 16,
            earlier: 12,
            checked_indices: vec![1, 6, 12],
            frames_per_step: 1,
            ..Self::matrix_game()
        }
    }

    pub fn gamecraft() -> Self {
        Self {
            mode: WindowMode::ChunkMerge,
            window_size: 33 + 12,
            earlier: 12,
            checked_indices: vec![1, 6, 12],
            frames_per_step: 33,
            chunk_len: Some(33),
            ..Self::matrix_game()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "matrix_game" => Ok(Self::matrix_game()),
            "open_oasis" => Ok(Self::open_oasis()),
            "gamecraft" => Ok(Self::gamecraft()),
            other => Err(Error::UnknownPreset(other.into())),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(self.theta > 0.0 && self.theta < 1.0) {
            return bad(format!("theta must be in (0, 1), got {}", self.theta));
        }
        if self.checked_indices.is_empty() {
            return bad("checked_indices must not be empty".into());
        }
        if !self.checked_indices.windows(2).all(|w| w[0] < w[1]) {
            return bad("checked_indices must be strictly ascending".into());
        }
        let (lo, hi) = (self.checked_indices[0], *self.checked_indices.last().unwrap());
        if lo < 1 || hi > self.earlier {
            return bad(format!("checked_indices must lie in [1, {}]", self.earlier));
        }
        if self.frames_per_step == 0 {
            return bad("frames_per_step must be at least 1".into());
        }
        match self.mode {
            WindowMode::Sliding => {
                if self.earlier + 1 >= self.window_size {
                    return bad(format!(
                        "earlier + 1 must be below window_size ({} + 1 >= {})",
                        self.earlier, self.window_size
                    ));
                }
            }
            WindowMode::ChunkMerge => {
                let Some(chunk) = self.chunk_len else {
                    return bad("chunk_merge mode needs chunk_len".into());
                };
                if chunk == 0 || self.earlier > chunk {
                    return bad("chunk_len must be at least 1 and no smaller than earlier".into());
                }
                if self.window_size < chunk {
                    return bad("window_size must hold at least one chunk".into());
                }
            }
        }
        self.metric.validate()
    }
}

#[derive(Debug, Clone)]
pub struct Slot {
    pub image: Arc<GrayImage>,
    pub payload_id: String,
    pub birth_step: u64,
}

/// Window contents in temporal order; slot 0 is the reference.
#[derive(Debug, Clone, Default)]
pub struct WindowState {
    pub slots: Vec<Slot>,
    pub step_counter: u64,
}

impl WindowState {
    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn payload_ids(&self) -> Vec<&str> {
        self.slots.iter().map(|s| s.payload_id.as_str()).collect()
    }

    pub fn contains(&self, payload_id: &str) -> bool {
        self.slots.iter().any(|s| s.payload_id == payload_id)
    }

    fn check_dims(&self, img: &GrayImage) -> Result<()> {
        match self.slots.first() {
            Some(s) => s.image.ensure_same_dims(img),
            None => Ok(()),
        }
    }
}

/// Which branch of the eviction rule fired.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Rule {
    AllPassed,
    FirstFailureAt(usize),
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Rule::AllPassed => f.write_str("AllPassed"),
            Rule::FirstFailureAt(k) => write!(f, "FirstFailureAt({k})"),
        }
    }
}

impl std::str::FromStr for Rule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "AllPassed" {
            return Ok(Rule::AllPassed);
        }
        s.strip_prefix("FirstFailureAt(")
            .and_then(|r| r.strip_suffix(')'))
            .and_then(|k| k.parse().ok())
            .map(Rule::FirstFailureAt)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown rule {s:?}")))
    }
}

impl Serialize for Rule {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Rule {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CheckedScore {
    pub k: usize,
    #[serde(flatten)]
    pub score: SimilarityScore,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvictionDecision {
    pub evicted_index: usize,
    pub evicted_payload_id: String,
    pub rule: Rule,
    pub scores: Vec<CheckedScore>,
}

/// Outcome of offering a new chunk to a chunk-merge window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergeDecision {
    pub merged: bool,
    /// frames of the previous window carried into the new one
    pub carried: usize,
    pub scores: Vec<CheckedScore>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub step: u64,
    pub pushed_payload_id: String,
    pub decision: Option<EvictionDecision>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub merge: Option<MergeDecision>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SequenceInfo {
    pub width: usize,
    pub height: usize,
    pub frames: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvictionTrace {
    pub config: EvictionConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sequence: Option<SequenceInfo>,
    pub steps: Vec<TraceStep>,
}

impl EvictionTrace {
    pub fn decisions(&self) -> impl Iterator<Item = &EvictionDecision> {
        self.steps.iter().filter_map(|s| s.decision.as_ref())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

fn checked(k: usize, score: SimilarityScore) -> CheckedScore {
    CheckedScore { k, score }
}

/// Eviction decision for a full window, before the incoming frame is added.
pub fn decide(state: &WindowState, cfg: &EvictionConfig, scorer: &Scorer) -> Result<EvictionDecision> {
    let k_far = cfg.earlier;
    if state.len() <= k_far {
        return Err(Error::OutOfRange {
            index: k_far,
            len: state.len(),
        });
    }
    let reference = &state.slots[0].image;
    let score_slot = |k: usize| scorer.score(reference, &state.slots[k].image);
    let mut scores = Vec::with_capacity(cfg.checked_indices.len());
    let mut last_pass = 0;
    let mut failure = None;
    for &k in &cfg.checked_indices {
        let s = score_slot(k)?;
        scores.push(checked(k, s));
        if s.value < cfg.theta {
            failure = Some(k);
            break;
        }
        last_pass = k;
    }
    let rule = match failure {
        None => Rule::AllPassed,
        Some(k_star) => {
            let mut first = k_star;
            if cfg.refine_failures {
                for j in last_pass + 1..k_star {
                    let s = score_slot(j)?;
                    scores.push(checked(j, s));
                    if s.value < cfg.theta {
                        first = j;
                        break;
                    }
                }
            }
            Rule::FirstFailureAt(first)
        }
    };
    let evicted_index = match rule {
        Rule::AllPassed => k_far,
        Rule::FirstFailureAt(k) => k - 1,
    };
    Ok(EvictionDecision {
        evicted_index,
        evicted_payload_id: state.slots[evicted_index].payload_id.clone(),
        rule,
        scores,
    })
}

/// Stateful eviction engine: window, scorer with feature cache, and trace.
pub struct EvictionEngine {
    config: EvictionConfig,
    scorer: Scorer,
    state: WindowState,
    trace: EvictionTrace,
}

impl EvictionEngine {
    pub fn new(config: EvictionConfig) -> Result<Self> {
        config.validate()?;
        // enough room for every window frame plus the incoming chunk
        let capacity = config.window_size + config.frames_per_step.max(config.chunk_len.unwrap_or(0)) + 4;
        let scorer = Scorer::with_capacity(config.metric.clone(), capacity)?;
        let trace = EvictionTrace {
            config: config.clone(),
            sequence: None,
            steps: Vec::new(),
        };
        Ok(Self {
            config,
            scorer,
            state: WindowState::default(),
            trace,
        })
    }

    pub fn from_preset(name: &str) -> Result<Self> {
        Self::new(EvictionConfig::preset(name)?)
    }

    pub fn config(&self) -> &EvictionConfig {
        &self.config
    }

    pub fn state(&self) -> &WindowState {
        &self.state
    }

    pub fn scorer(&self) -> &Scorer {
        &self.scorer
    }

    pub fn trace(&self) -> &EvictionTrace {
        &self.trace
    }

    pub fn into_trace(self) -> EvictionTrace {
        self.trace
    }

    fn record(&mut self, img: &GrayImage, frames: usize) {
        let (width, height) = img.dims();
        let seq = self.trace.sequence.get_or_insert(SequenceInfo {
            width,
            height,
            frames: 0,
        });
        seq.frames += frames;
    }

    /// Adds one frame. Returns the eviction made to fit it, or `None` while
    /// the window is still filling.
    pub fn push(&mut self, image: GrayImage, payload_id: impl Into<String>) -> Result<Option<EvictionDecision>> {
        if self.config.mode != WindowMode::Sliding {
            return Err(Error::InvalidConfig("push needs sliding mode; use push_chunk".into()));
        }
        self.state.check_dims(&image)?;
        let payload_id = payload_id.into();
        let decision = if self.state.len() >= self.config.window_size {
            let d = decide(&self.state, &self.config, &self.scorer)?;
            self.state.slots.remove(d.evicted_index);
            Some(d)
        } else {
            None
        };
        self.record(&image, 1);
        let step = self.state.step_counter;
        self.state.slots.push(Slot {
            image: Arc::new(image),
            payload_id: payload_id.clone(),
            birth_step: step,
        });
        self.state.step_counter += 1;
        self.trace.steps.push(TraceStep {
            step,
            pushed_payload_id: payload_id,
            decision: decision.clone(),
            merge: None,
        });
        Ok(decision)
    }

    /// Pushes a generation step's frames in order, one eviction per frame.
    pub fn push_step<I, S>(&mut self, frames: I) -> Result<Vec<EvictionDecision>>
    where
        I: IntoIterator<Item = (GrayImage, S)>,
        S: Into<String>,
    {
        let mut out = Vec::new();
        for (img, id) in frames {
            if let Some(d) = self.push(img, id)? {
                out.push(d);
            }
        }
        Ok(out)
    }

    /// Offers a whole chunk in chunk-merge mode. The first chunk fills the
    /// window. Later chunks are compared frame by frame at the checked
    /// positions with the current window; if every score reaches `theta`
    /// the window's leading `earlier` frames are carried in front of the new
    /// chunk (keeping the newest `window_size`), otherwise the chunk replaces
    /// the window.
    pub fn push_chunk<I, S>(&mut self, frames: I) -> Result<Option<MergeDecision>>
    where
        I: IntoIterator<Item = (GrayImage, S)>,
        S: Into<String>,
    {
        if self.config.mode != WindowMode::ChunkMerge {
            return Err(Error::InvalidConfig("push_chunk needs chunk_merge mode".into()));
        }
        let chunk_len = self.config.chunk_len.expect("validated");
        let chunk: Vec<(GrayImage, String)> = frames.into_iter().map(|(i, s)| (i, s.into())).collect();
        if chunk.len() != chunk_len {
            return Err(Error::InvalidConfig(format!(
                "chunk holds {} frames, expected {chunk_len}",
                chunk.len()
            )));
        }
        for (img, _) in &chunk {
            self.state.check_dims(img)?;
            chunk[0].0.ensure_same_dims(img)?;
        }
        let decision = if self.state.is_empty() {
            None
        } else {
            let mut scores = Vec::new();
            let mut merged = true;
            for &k in &self.config.checked_indices {
                let i = k - 1;
                let prev = self.state.slots.get(i).ok_or(Error::OutOfRange {
                    index: i,
                    len: self.state.len(),
                })?;
                let s = self.scorer.score(&prev.image, &chunk[i].0)?;
                scores.push(checked(k, s));
                if s.value < self.config.theta {
                    merged = false;
                    break;
                }
            }
            let carried = if merged { self.config.earlier.min(self.state.len()) } else { 0 };
            Some(MergeDecision { merged, carried, scores })
        };
        let carried = decision.as_ref().map_or(0, |d| d.carried);
        let step = self.state.step_counter;
        let first_id = chunk[0].1.clone();
        self.record(&chunk[0].0, chunk.len());
        let mut slots: Vec<Slot> = self.state.slots.drain(..carried).collect();
        slots.extend(chunk.into_iter().map(|(img, id)| Slot {
            image: Arc::new(img),
            payload_id: id,
            birth_step: step,
        }));
        let excess = slots.len().saturating_sub(self.config.window_size);
        slots.drain(..excess);
        self.state.slots = slots;
        self.state.step_counter += 1;
        self.trace.steps.push(TraceStep {
            step,
            pushed_payload_id: first_id,
            decision: None,
            merge: decision.clone(),
        });
        Ok(decision)
    }
}

/// Streams a whole sequence through a fresh engine: `frames_per_step`
/// frames per step in sliding mode, whole chunks in chunk-merge mode. A
/// trailing partial chunk is not pushed.
pub fn run_sequence(config: &EvictionConfig, frames: &[Frame]) -> Result<EvictionEngine> {
    let mut engine = EvictionEngine::new(config.clone())?;
    let step = match config.mode {
        WindowMode::Sliding => config.frames_per_step,
        WindowMode::ChunkMerge => config.chunk_len.expect("validated"),
    };
    for group in frames.chunks(step) {
        let items = group.iter().map(|f| (f.image.clone(), f.payload_id.clone()));
        match config.mode {
            WindowMode::Sliding => {
                engine.push_step(items)?;
            }
            WindowMode::ChunkMerge if group.len() == step => {
                engine.push_chunk(items)?;
            }
            WindowMode::ChunkMerge => {}
        }
    }
    Ok(engine)
}

/// Window payload lists after each trace step, rebuilt from the trace alone.
pub fn replay_windows(trace: &EvictionTrace, chunk_payloads: Option<&[Vec<String>]>) -> Result<Vec<Vec<String>>> {
    let cfg = &trace.config;
    let mut window: Vec<String> = Vec::new();
    let mut out = Vec::with_capacity(trace.steps.len());
    for (i, step) in trace.steps.iter().enumerate() {
        match cfg.mode {
            WindowMode::Sliding => {
                if let Some(d) = &step.decision {
                    if window.get(d.evicted_index) != Some(&d.evicted_payload_id) {
                        return Err(Error::InvalidConfig(format!(
                            "trace step {} evicts {:?} from slot {} but replay has {:?}",
                            step.step,
                            d.evicted_payload_id,
                            d.evicted_index,
                            window.get(d.evicted_index)
                        )));
                    }
                    window.remove(d.evicted_index);
                }
                window.push(step.pushed_payload_id.clone());
            }
            WindowMode::ChunkMerge => {
                let chunk = chunk_payloads
                    .and_then(|c| c.get(i))
                    .ok_or_else(|| Error::InvalidConfig("chunk replay needs the chunk payload lists".into()))?;
                let carried = step.merge.as_ref().map_or(0, |m| m.carried);
                window.truncate(carried);
                window.extend(chunk.iter().cloned());
                let excess = window.len().saturating_sub(cfg.window_size);
                window.drain(..excess);
            }
        }
        out.push(window.clone());
    }
    Ok(out)
}

/// Aggregate statistics of a sliding-mode trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceSummary {
    pub steps: usize,
    pub decisions: usize,
    pub rule_histogram: BTreeMap<String, usize>,
    /// consecutive steps from the start during which the first frame stayed in the window
    pub first_frame_retention: usize,
    pub first_frame_retained_throughout: bool,
    /// how long each frame that served as reference held slot 0, in steps
    pub reference_tenures: Vec<(String, usize)>,
    pub mean_reference_tenure: f64,
    /// per scene cut: pushes from the first frame of the new scene until no
    /// frame of the old scene remains, or `None` if that never happens
    pub flush_latencies: Vec<(usize, Option<usize>)>,
}

/// Summarises a sliding-mode trace. `scene_of` gives the scene id of each
/// pushed frame, in push order, when known.
pub fn summarize(trace: &EvictionTrace, scene_of: Option<&[usize]>) -> Result<TraceSummary> {
    let windows = replay_windows(trace, None)?;
    let mut hist = BTreeMap::new();
    for d in trace.decisions() {
        *hist.entry(d.rule.to_string()).or_insert(0) += 1;
    }
    let first = trace.steps.first().map(|s| s.pushed_payload_id.clone());
    let retention = match &first {
        Some(id) => windows.iter().take_while(|w| w.contains(id)).count(),
        None => 0,
    };
    let mut tenures: Vec<(String, usize)> = Vec::new();
    for w in &windows {
        let Some(reference) = w.first() else { continue };
        match tenures.last_mut() {
            Some((id, n)) if id == reference => *n += 1,
            _ => tenures.push((reference.clone(), 1)),
        }
    }
    let mean_tenure = if tenures.is_empty() {
        0.0
    } else {
        tenures.iter().map(|t| t.1 as f64).sum::<f64>() / tenures.len() as f64
    };
    let mut flush = Vec::new();
    if let Some(scenes) = scene_of {
        if scenes.len() != trace.steps.len() {
            return Err(Error::InvalidConfig(format!(
                "{} scene labels for {} steps",
                scenes.len(),
                trace.steps.len()
            )));
        }
        let scene_by_id: std::collections::HashMap<&str, usize> = trace
            .steps
            .iter()
            .zip(scenes)
            .map(|(s, &sc)| (s.pushed_payload_id.as_str(), sc))
            .collect();
        for cut in 1..scenes.len() {
            if scenes[cut] == scenes[cut - 1] {
                continue;
            }
            let new_scene = scenes[cut];
            let latency = windows[cut..]
                .iter()
                .position(|w| w.iter().all(|id| scene_by_id.get(id.as_str()) == Some(&new_scene)))
                .map(|p| p + 1);
            flush.push((cut, latency));
        }
    }
    Ok(TraceSummary {
        steps: trace.steps.len(),
        decisions: trace.decisions().count(),
        rule_histogram: hist,
        first_frame_retention: retention,
        first_frame_retained_throughout: retention == windows.len(),
        reference_tenures: tenures,
        mean_reference_tenure: mean_tenure,
        flush_latencies: flush,
    })
}
