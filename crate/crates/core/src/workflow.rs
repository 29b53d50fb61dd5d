//! The per-pair control loop and the batch runner around it.
//!
//! Caption both modalities once, score the original audio, then repeat
//! plan, edit, re-score until both scores reach the threshold, the cycle
//! budget runs out, or the planner has nothing new to offer. A candidate
//! replaces the current best only when its minimum score improves by at
//! least `improvement_epsilon`, so the output is never worse than the input.

use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::actions::{apply_chain, Action};
use crate::audio::{load_for_pipeline, write_wav, AudioBuffer, WavFormat};
use crate::backend::{BackendClient, BackendConfig};
use crate::caption::{Caption, Captioner, Fallback, NotableThresholds};
use crate::corpus::{canonical_json, write_manifest, write_text, AVPairRecord};
use crate::error::{Error, Result};
use crate::planning::{
    ActionPlan, PlanContext, Planner, PlannerKind, RandomPlanner, RemotePlanner, RulePlanner, RuleThresholds,
};
use crate::reflection::{reflect, ClassProfiles, ProxyScorer, ReflectionScores, ScorerKind};
use crate::video::VideoFeatureSeries;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RevertPolicy {
    /// Every candidate is built from the original audio.
    OriginalOnNoImprove,
    /// Candidates are built from the current best audio.
    Chain,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScorerChoice {
    Proxy,
    Remote,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CaptionerChoice {
    Builtin,
    Remote,
    /// Remote, answering with the builtin captioner when the backend fails.
    RemoteOrBuiltin,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorkflowConfig {
    pub threshold: f64,
    pub max_cycles: usize,
    pub improvement_epsilon: f64,
    pub revert_policy: RevertPolicy,
    pub planner: PlannerKind,
    pub scorer: ScorerChoice,
    pub captioner: CaptionerChoice,
    pub seed: u64,
    pub rules: RuleThresholds,
    pub notable: NotableThresholds,
    /// Class-profile file for the proxy scorer; builtin profiles when unset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub profiles_path: Option<PathBuf>,
    pub envelope_fallback: bool,
}

impl Default for WorkflowConfig {
    fn default() -> Self {
        Self {
            threshold: 0.85,
            max_cycles: 5,
            improvement_epsilon: 0.01,
            revert_policy: RevertPolicy::OriginalOnNoImprove,
            planner: PlannerKind::Rule,
            scorer: ScorerChoice::Proxy,
            captioner: CaptionerChoice::Builtin,
            seed: 0,
            rules: RuleThresholds::default(),
            notable: NotableThresholds::default(),
            profiles_path: None,
            envelope_fallback: true,
        }
    }
}

impl WorkflowConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.threshold > 0.0 && self.threshold <= 1.0) {
            return Err(Error::range("threshold", self.threshold, "(0, 1]"));
        }
        if self.max_cycles == 0 {
            return Err(Error::range("max_cycles", 0.0, ">= 1"));
        }
        if !(self.improvement_epsilon >= 0.0 && self.improvement_epsilon.is_finite()) {
            return Err(Error::range("improvement_epsilon", self.improvement_epsilon, ">= 0"));
        }
        Ok(())
    }
}

/// Instantiated components for one configuration.
#[derive(Clone)]
pub struct Workflow {
    pub config: WorkflowConfig,
    pub captioner: Captioner,
    pub planner: Arc<dyn Planner>,
    pub scorer: ScorerKind,
}

impl std::fmt::Debug for Workflow {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Workflow")
            .field("config", &self.config)
            .field("captioner", &self.captioner)
            .field("scorer", &self.scorer)
            .finish_non_exhaustive()
    }
}

impl Workflow {
    /// Builds the configured components. The backend configuration is only
    /// consulted when some component is remote.
    pub fn new(config: WorkflowConfig, backend: &BackendConfig) -> Result<Self> {
        config.validate()?;
        let needs_backend = config.planner == PlannerKind::Remote
            || config.scorer == ScorerChoice::Remote
            || config.captioner != CaptionerChoice::Builtin;
        let client = if needs_backend {
            Some(BackendClient::new(backend.clone())?)
        } else {
            None
        };
        let profiles = match &config.profiles_path {
            Some(p) => Arc::new(ClassProfiles::load(p)?),
            None => ClassProfiles::builtin(),
        };
        let planner: Arc<dyn Planner> = match config.planner {
            PlannerKind::Rule => Arc::new(RulePlanner {
                thresholds: config.rules,
                profiles: profiles.clone(),
            }),
            PlannerKind::Random => Arc::new(RandomPlanner),
            PlannerKind::Remote => Arc::new(RemotePlanner(client.clone().expect("client built above"))),
        };
        let scorer = match config.scorer {
            ScorerChoice::Proxy => ScorerKind::Proxy(ProxyScorer {
                profiles,
                envelope_fallback: config.envelope_fallback,
            }),
            ScorerChoice::Remote => ScorerKind::Remote(client.clone().expect("client built above")),
        };
        let captioner = match config.captioner {
            CaptionerChoice::Builtin => Captioner::Builtin(config.notable),
            CaptionerChoice::Remote => Captioner::Remote {
                client: client.clone().expect("client built above"),
                fallback: Fallback::None,
            },
            CaptionerChoice::RemoteOrBuiltin => Captioner::Remote {
                client: client.expect("client built above"),
                fallback: Fallback::Builtin,
            },
        };
        Ok(Self {
            config,
            captioner,
            planner,
            scorer,
        })
    }

    /// All-builtin components.
    pub fn builtin(config: WorkflowConfig) -> Result<Self> {
        Self::new(config, &BackendConfig::default())
    }

    pub fn with_planner(mut self, planner: Arc<dyn Planner>) -> Self {
        self.planner = planner;
        self
    }

    /// Loads the pair's audio and runs the loop on it.
    pub fn run_pair(&self, record: &AVPairRecord, root: &Path) -> Result<(AudioBuffer, WorkflowTrace)> {
        let audio = load_for_pipeline(&record.resolve_audio(root))?;
        Ok(self.run_audio(&record.pair_id, &audio, &record.video_features))
    }

    /// The loop itself. Never fails: an error ends the loop, is recorded in
    /// the trace, and the best audio so far is returned.
    pub fn run_audio(&self, pair_id: &str, original: &AudioBuffer, video: &VideoFeatureSeries) -> (AudioBuffer, WorkflowTrace) {
        let mut trace = WorkflowTrace {
            pair_id: pair_id.to_string(),
            baseline_scores: None,
            cycles: Vec::new(),
            final_scores: None,
            terminal_reason: TerminalReason::Errored,
            error: None,
        };
        let mut best = original.clone();
        if let Err(e) = self.cycle_loop(original, video, &mut best, &mut trace) {
            log::warn!("pair {pair_id}: {e}");
            trace.terminal_reason = TerminalReason::Errored;
            trace.error = Some(e.to_string());
        }
        (best, trace)
    }

    fn cycle_loop(
        &self,
        original: &AudioBuffer,
        video: &VideoFeatureSeries,
        best: &mut AudioBuffer,
        trace: &mut WorkflowTrace,
    ) -> Result<()> {
        let cfg = &self.config;
        let captions = Captions {
            audio: self.captioner.audio(original)?,
            video: self.captioner.video(video)?,
        };
        let baseline = reflect(original, video, &self.scorer)?;
        trace.baseline_scores = Some(baseline);
        trace.final_scores = Some(baseline);
        let mut best_scores = baseline;
        let mut feedback = Some(baseline);
        let mut history: Vec<Vec<Action>> = Vec::new();
        let mut reason = TerminalReason::BudgetExhausted;
        for cycle in 0..cfg.max_cycles {
            if best_scores.min() >= cfg.threshold {
                break;
            }
            let seed = cycle_seed(cfg.seed, &trace.pair_id, cycle);
            let ctx = PlanContext {
                audio_caption: captions.audio.clone(),
                video_caption: captions.video.clone(),
                feedback,
                cycle_index: cycle,
                history: history.clone(),
            };
            let plan = self.planner.plan(&ctx, seed)?;
            plan.validate()?;
            let actions = plan.action_list();
            if history.contains(&actions) {
                reason = TerminalReason::PlannerExhausted;
                break;
            }
            let base = match cfg.revert_policy {
                RevertPolicy::OriginalOnNoImprove => original,
                RevertPolicy::Chain => &*best,
            };
            let candidate = apply_chain(base, &actions, seed)?;
            let after = reflect(&candidate, video, &self.scorer)?;
            let accepted = after.min() >= best_scores.min() + cfg.improvement_epsilon;
            trace.cycles.push(CycleRecord {
                cycle_index: cycle,
                captions: captions.clone(),
                plan,
                scores_before: best_scores,
                scores_after: after,
                decision: if accepted { Decision::Accepted } else { Decision::Reverted },
                audio_hash: audio_hash(&candidate),
            });
            history.push(actions);
            feedback = Some(after);
            if accepted {
                *best = candidate;
                best_scores = after;
                trace.final_scores = Some(after);
            }
        }
        trace.terminal_reason = if best_scores.min() >= cfg.threshold {
            TerminalReason::ThresholdMet
        } else {
            reason
        };
        Ok(())
    }
}

/// Per-pair, per-cycle seed: the first 8 bytes of SHA-256 over the inputs.
pub fn cycle_seed(seed: u64, pair_id: &str, cycle: usize) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(pair_id.as_bytes());
    h.update((cycle as u64).to_le_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("digest is 32 bytes"))
}

/// First 16 hex digits of SHA-256 over the samples' little-endian bits.
pub fn audio_hash(audio: &AudioBuffer) -> String {
    let mut h = Sha256::new();
    h.update(audio.sample_rate_hz().to_le_bytes());
    for s in audio.samples() {
        h.update(s.to_bits().to_le_bytes());
    }
    h.finalize()[..8].iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Captions {
    pub audio: Caption,
    pub video: Caption,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Accepted,
    Reverted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminalReason {
    ThresholdMet,
    BudgetExhausted,
    PlannerExhausted,
    Errored,
}

impl TerminalReason {
    pub fn as_str(self) -> &'static str {
        match self {
            TerminalReason::ThresholdMet => "threshold_met",
            TerminalReason::BudgetExhausted => "budget_exhausted",
            TerminalReason::PlannerExhausted => "planner_exhausted",
            TerminalReason::Errored => "errored",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleRecord {
    pub cycle_index: usize,
    pub captions: Captions,
    pub plan: ActionPlan,
    pub scores_before: ReflectionScores,
    pub scores_after: ReflectionScores,
    pub decision: Decision,
    /// Hash of the candidate audio this cycle produced.
    pub audio_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkflowTrace {
    pub pair_id: String,
    /// Absent when the pair failed before it could be scored.
    pub baseline_scores: Option<ReflectionScores>,
    pub cycles: Vec<CycleRecord>,
    pub final_scores: Option<ReflectionScores>,
    pub terminal_reason: TerminalReason,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

pub fn parse_traces(text: &str) -> Result<Vec<WorkflowTrace>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Parse {
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

pub fn render_traces(traces: &[WorkflowTrace]) -> Result<String> {
    let mut out = String::new();
    for t in traces {
        out += &canonical_json(t)?;
        out.push('\n');
    }
    Ok(out)
}

/// One pair's batch result. `audio` is absent when the input could not be read.
#[derive(Debug, Clone)]
pub struct PairResult {
    pub record: AVPairRecord,
    pub audio: Option<AudioBuffer>,
    pub trace: WorkflowTrace,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MeanScores {
    pub alignment: f64,
    pub temporal: f64,
    pub min: f64,
}

impl MeanScores {
    pub fn of<'a>(scores: impl IntoIterator<Item = &'a ReflectionScores>) -> Self {
        let (mut a, mut t, mut m, mut n) = (0.0, 0.0, 0.0, 0usize);
        for s in scores {
            a += s.alignment;
            t += s.temporal;
            m += s.min();
            n += 1;
        }
        if n == 0 {
            return Self::default();
        }
        let n = n as f64;
        Self {
            alignment: a / n,
            temporal: t / n,
            min: m / n,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairError {
    pub pair_id: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchReport {
    pub pairs: usize,
    pub completed: usize,
    pub errored: usize,
    /// Means over pairs that produced scores.
    pub mean_baseline: MeanScores,
    pub mean_final: MeanScores,
    pub mean_min_delta: f64,
    /// Actions of every planned candidate, by kind.
    pub actions_planned: BTreeMap<String, usize>,
    /// Actions of accepted candidates only.
    pub actions_accepted: BTreeMap<String, usize>,
    pub terminal_reasons: BTreeMap<String, usize>,
    pub errors: Vec<PairError>,
}

impl BatchReport {
    pub fn from_traces(traces: &[WorkflowTrace]) -> Self {
        let scored: Vec<(&ReflectionScores, &ReflectionScores)> = traces
            .iter()
            .filter_map(|t| Some((t.baseline_scores.as_ref()?, t.final_scores.as_ref()?)))
            .collect();
        let mut planned = BTreeMap::new();
        let mut accepted = BTreeMap::new();
        let mut reasons = BTreeMap::new();
        for t in traces {
            *reasons.entry(t.terminal_reason.as_str().to_string()).or_insert(0) += 1;
            for c in &t.cycles {
                for a in &c.plan.actions {
                    *planned.entry(a.kind().to_string()).or_insert(0) += 1;
                    if c.decision == Decision::Accepted {
                        *accepted.entry(a.kind().to_string()).or_insert(0) += 1;
                    }
                }
            }
        }
        let errors: Vec<PairError> = traces
            .iter()
            .filter_map(|t| {
                t.error.as_ref().map(|e| PairError {
                    pair_id: t.pair_id.clone(),
                    error: e.clone(),
                })
            })
            .collect();
        let mean_baseline = MeanScores::of(scored.iter().map(|(b, _)| *b));
        let mean_final = MeanScores::of(scored.iter().map(|(_, f)| *f));
        Self {
            pairs: traces.len(),
            completed: traces.len() - errors.len(),
            errored: errors.len(),
            mean_baseline,
            mean_final,
            mean_min_delta: mean_final.min - mean_baseline.min,
            actions_planned: planned,
            actions_accepted: accepted,
            terminal_reasons: reasons,
            errors,
        }
    }

    /// Aligned plain-text rendering.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        s += &format!("{:<22}{:>10}\n", "pairs", self.pairs);
        s += &format!("{:<22}{:>10}\n", "completed", self.completed);
        s += &format!("{:<22}{:>10}\n", "errored", self.errored);
        s += &format!("\n{:<22}{:>10}{:>10}{:>10}\n", "scores", "align", "temporal", "min");
        for (name, m) in [("baseline", self.mean_baseline), ("final", self.mean_final)] {
            s += &format!("{:<22}{:>10.4}{:>10.4}{:>10.4}\n", name, m.alignment, m.temporal, m.min);
        }
        s += &format!("{:<22}{:>30.4}\n", "mean min delta", self.mean_min_delta);
        s += &format!("\n{:<22}{:>10}{:>10}\n", "action", "planned", "accepted");
        for (k, n) in &self.actions_planned {
            let a = self.actions_accepted.get(k).copied().unwrap_or(0);
            s += &format!("{:<22}{:>10}{:>10}\n", k, n, a);
        }
        s += &format!("\n{:<22}{:>10}\n", "terminal reason", "pairs");
        for (k, n) in &self.terminal_reasons {
            s += &format!("{:<22}{:>10}\n", k, n);
        }
        for e in &self.errors {
            s += &format!("\nerror {}: {}", e.pair_id, e.error);
        }
        if !self.errors.is_empty() {
            s.push('\n');
        }
        s
    }
}

#[derive(Debug, Clone)]
pub struct BatchResult {
    /// Sorted by pair id.
    pub pairs: Vec<PairResult>,
    pub report: BatchReport,
}

impl BatchResult {
    pub fn traces(&self) -> Vec<WorkflowTrace> {
        self.pairs.iter().map(|p| p.trace.clone()).collect()
    }
}

/// Runs every record on a pool of `parallelism` threads. Unreadable audio
/// and per-pair failures are recorded, never fatal; only duplicate ids and
/// a failure to build the pool abort.
pub fn run_batch(records: &[AVPairRecord], root: &Path, wf: &Workflow, parallelism: usize) -> Result<BatchResult> {
    let mut seen = HashSet::new();
    for r in records {
        if !seen.insert(r.pair_id.as_str()) {
            return Err(Error::DuplicatePairId(r.pair_id.clone()));
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let mut pairs: Vec<PairResult> = pool.install(|| {
        records
            .par_iter()
            .map(|r| match wf.run_pair(r, root) {
                Ok((audio, trace)) => PairResult {
                    record: r.clone(),
                    audio: Some(audio),
                    trace,
                },
                Err(e) => {
                    log::warn!("pair {}: {e}", r.pair_id);
                    PairResult {
                        record: r.clone(),
                        audio: None,
                        trace: WorkflowTrace {
                            pair_id: r.pair_id.clone(),
                            baseline_scores: None,
                            cycles: Vec::new(),
                            final_scores: None,
                            terminal_reason: TerminalReason::Errored,
                            error: Some(e.to_string()),
                        },
                    }
                }
            })
            .collect()
    });
    pairs.sort_by(|a, b| a.record.pair_id.cmp(&b.record.pair_id));
    let traces: Vec<WorkflowTrace> = pairs.iter().map(|p| p.trace.clone()).collect();
    Ok(BatchResult {
        report: BatchReport::from_traces(&traces),
        pairs,
    })
}

/// Extra field in the output manifest pointing at the pair's trace line.
pub const TRACE_REF_FIELD: &str = "trace_ref";

/// Writes `audio/<pair_id>.wav` (16-bit), `manifest.jsonl`, `traces.jsonl`,
/// `report.json` and `report.txt` under `out_dir`.
///
/// The output manifest copies each input record with `audio_path` pointing
/// at the aligned file. Pairs without output audio are left out of it.
pub fn write_batch(result: &BatchResult, out_dir: &Path) -> Result<Vec<AVPairRecord>> {
    let mut out_records = Vec::new();
    for p in &result.pairs {
        let Some(audio) = &p.audio else { continue };
        let rel = PathBuf::from(format!("audio/{}.wav", p.record.pair_id));
        write_wav(&out_dir.join(&rel), audio, WavFormat::Pcm16)?;
        let mut rec = p.record.clone();
        rec.audio_path = rel;
        rec.extra.insert(
            TRACE_REF_FIELD.into(),
            Value::String(format!("traces.jsonl#{}", p.record.pair_id)),
        );
        out_records.push(rec);
    }
    write_manifest(&out_records, &out_dir.join("manifest.jsonl"))?;
    write_text(&out_dir.join("traces.jsonl"), &render_traces(&result.traces())?)?;
    write_text(
        &out_dir.join("report.json"),
        &(serde_json::to_string_pretty(&serde_json::to_value(&result.report)?)? + "\n"),
    )?;
    write_text(&out_dir.join("report.txt"), &result.report.to_text())?;
    Ok(out_records)
}
