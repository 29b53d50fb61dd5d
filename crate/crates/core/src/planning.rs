//! Turning captions and feedback into an action plan.
//!
//! A plan holds one or two actions: at most one noise filter followed by at
//! most one coordination action. Three planners are provided: a
//! deterministic rule table, a seeded random baseline, and a remote backend.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::actions::{
    Action, ActionKind, EditAction, FillMode, FillParams, NoiseParams, PitchParams, SpeedParams,
    ThresholdMode, ThresholdRule, VolumeParams, Wavelet, WaveletParams,
};
use crate::backend::{BackendClient, BackendRequest, Task};
use crate::caption::{feature, Caption};
use crate::error::{Error, Result};
use crate::reflection::{ClassProfiles, ReflectionScores};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanContext {
    pub audio_caption: Caption,
    pub video_caption: Caption,
    /// Latest scores: the baseline on cycle 0, then the previous candidate.
    /// Absent when the planner is used outside the workflow.
    pub feedback: Option<ReflectionScores>,
    pub cycle_index: usize,
    /// Action lists already tried for this pair.
    pub history: Vec<Vec<Action>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlannerKind {
    Rule,
    Random,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionPlan {
    pub actions: Vec<EditAction>,
    pub planner_kind: PlannerKind,
    pub rationale: String,
}

impl ActionPlan {
    pub fn new(actions: Vec<EditAction>, planner_kind: PlannerKind, rationale: impl Into<String>) -> Result<Self> {
        let plan = Self {
            actions,
            planner_kind,
            rationale: rationale.into(),
        };
        plan.validate()?;
        Ok(plan)
    }

    /// Length 1-2, every action in range, noise filter before coordination.
    pub fn validate(&self) -> Result<()> {
        validate_actions(&self.action_list())
    }

    pub fn action_list(&self) -> Vec<Action> {
        self.actions.iter().map(|a| a.action).collect()
    }
}

fn validate_actions(actions: &[Action]) -> Result<()> {
    if actions.is_empty() || actions.len() > 2 {
        return Err(Error::IllegalAction(format!(
            "plans hold 1 or 2 actions, got {}",
            actions.len()
        )));
    }
    for a in actions {
        a.validate()
            .map_err(|e| Error::IllegalAction(format!("{}: {e}", a.kind())))?;
    }
    if let [a, b] = actions {
        if !(a.kind().is_noise_filter() && !b.kind().is_noise_filter()) {
            return Err(Error::IllegalAction(format!(
                "a two-action plan needs a noise filter then a coordination action, got {} then {}",
                a.kind(),
                b.kind()
            )));
        }
    }
    Ok(())
}

/// The plan that changes nothing: volume at 0 dB.
pub fn no_op_action() -> Action {
    Action::VolumeAdjust(VolumeParams::gain_db(0.0))
}

pub trait Planner: Send + Sync {
    fn plan(&self, ctx: &PlanContext, seed: u64) -> Result<ActionPlan>;
}

/// Thresholds of the rule table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RuleThresholds {
    pub snr_db: f64,
    pub silence_ratio: f64,
    /// Mean video activity above which the scene counts as active.
    pub active_video_mean: f64,
    /// Relative audio/video duration mismatch that triggers a speed change.
    pub rate_mismatch: f64,
    pub rms_low: f64,
    pub rms_high: f64,
    pub target_rms: f64,
    /// Centroid distance from the labelled class that triggers a pitch shift.
    pub pitch_mismatch_semitones: f64,
    /// Feedback score below which a dimension counts as failing.
    pub score_threshold: f64,
}

impl Default for RuleThresholds {
    fn default() -> Self {
        Self {
            snr_db: 10.0,
            silence_ratio: 0.2,
            active_video_mean: 0.01,
            rate_mismatch: 0.15,
            rms_low: 0.03,
            rms_high: 0.5,
            target_rms: 0.1,
            pitch_mismatch_semitones: 2.0,
            score_threshold: 0.85,
        }
    }
}

/// The deterministic rule table.
#[derive(Debug, Clone)]
pub struct RulePlanner {
    pub thresholds: RuleThresholds,
    pub profiles: Arc<ClassProfiles>,
}

impl Default for RulePlanner {
    fn default() -> Self {
        Self {
            thresholds: RuleThresholds::default(),
            profiles: ClassProfiles::builtin(),
        }
    }
}

struct Measured {
    snr_db: f64,
    silence_ratio: f64,
    clipping_ratio: f64,
    rms: f64,
    audio_s: f64,
    centroid_hz: f64,
    video_s: f64,
    activity_mean: f64,
}

fn measured(ctx: &PlanContext) -> Result<Measured> {
    let a = |k: &str| ctx.audio_caption.feature(k).ok_or(Error::MissingFeatures);
    let v = |k: &str| ctx.video_caption.feature(k).ok_or(Error::MissingFeatures);
    Ok(Measured {
        snr_db: a(feature::SNR_ESTIMATE_DB)?,
        silence_ratio: a(feature::SILENCE_RATIO)?,
        clipping_ratio: a(feature::CLIPPING_RATIO)?,
        rms: a(feature::RMS)?,
        audio_s: a(feature::DURATION_S)?,
        centroid_hz: a(feature::DOMINANT_BAND_HZ)?,
        video_s: v(feature::DURATION_S)?,
        activity_mean: v(feature::ACTIVITY_MEAN)?,
    })
}

type Candidate = (Vec<Action>, String);

impl RulePlanner {
    /// Semitones from the audio centroid to the first labelled class centroid.
    fn pitch_offset(&self, ctx: &PlanContext, m: &Measured) -> Option<f64> {
        if m.centroid_hz <= 0.0 {
            return None;
        }
        let class = ctx
            .video_caption
            .labels
            .iter()
            .find_map(|l| self.profiles.get(l))?;
        Some(12.0 * (class.centroid_hz / m.centroid_hz).log2())
    }

    /// Coordination rules that fire, in priority order.
    fn coordination(&self, ctx: &PlanContext, m: &Measured) -> Vec<(Action, String)> {
        let t = &self.thresholds;
        let mut out = Vec::new();
        if m.video_s > 0.0 {
            let ratio = m.audio_s / m.video_s;
            if (ratio - 1.0).abs() > t.rate_mismatch {
                let factor = ratio.clamp(0.5, 2.0);
                out.push((
                    Action::SpeedMod(SpeedParams { speed_factor: factor }),
                    format!("audio runs {:.2} s against {:.2} s of video", m.audio_s, m.video_s),
                ));
            }
        }
        if m.silence_ratio > t.silence_ratio && m.activity_mean > t.active_video_mean {
            out.push((
                Action::FillBlanks(FillParams::default()),
                format!("{:.0}% of the audio is blank while the video is active", 100.0 * m.silence_ratio),
            ));
        }
        if m.rms > 0.0 && (m.rms < t.rms_low || m.rms > t.rms_high) {
            out.push((
                Action::VolumeAdjust(VolumeParams::target_rms(t.target_rms)),
                format!("level {:.3} RMS is outside [{}, {}]", m.rms, t.rms_low, t.rms_high),
            ));
        }
        if m.snr_db >= t.snr_db {
            if let Some(st) = self.pitch_offset(ctx, m) {
                if st.abs() > t.pitch_mismatch_semitones {
                    out.push((
                        Action::PitchMod(PitchParams {
                            pitch_semitones: st.clamp(-12.0, 12.0),
                        }),
                        format!("spectral centre is {st:.1} semitones off the labelled source"),
                    ));
                }
            }
        }
        out
    }

    fn noise_action(&self, m: &Measured) -> Option<(Action, String)> {
        if m.snr_db >= self.thresholds.snr_db {
            return None;
        }
        let clipped = m.clipping_ratio > 0.01;
        let action = if clipped {
            Action::SpectralSubtraction(NoiseParams::default())
        } else {
            Action::WienerFilter(NoiseParams::default())
        };
        Some((
            action,
            format!(
                "estimated SNR {:.1} dB{}",
                m.snr_db,
                if clipped { " with clipping" } else { "" }
            ),
        ))
    }

    /// Every plan the table would consider, best first.
    fn candidates(&self, ctx: &PlanContext) -> Result<Vec<Candidate>> {
        let m = measured(ctx)?;
        let t = &self.thresholds;
        let coord = self.coordination(ctx, &m);
        let noise = self.noise_action(&m);

        let mut out: Vec<Candidate> = Vec::new();
        let primary: Vec<(Action, String)> = noise.iter().cloned().chain(coord.first().cloned()).collect();
        if !primary.is_empty() {
            out.push(join(&primary));
        }

        if let Some(fb) = ctx.feedback {
            let low_align = fb.alignment < t.score_threshold;
            let low_temporal = fb.temporal < t.score_threshold;
            let mut noise_alts: Vec<(Action, String)> = Vec::new();
            if noise.is_some() || low_align {
                let why = noise
                    .as_ref()
                    .map(|n| n.1.clone())
                    .unwrap_or_else(|| format!("alignment {:.2} below threshold", fb.alignment));
                noise_alts = [
                    ActionKind::WienerFilter,
                    ActionKind::SpectralSubtraction,
                    ActionKind::SpectralGate,
                    ActionKind::WaveletDenoise,
                ]
                .into_iter()
                .map(|k| (k.default_action(), why.clone()))
                .collect();
            }
            let mut coord_alts = coord.clone();
            if low_temporal && m.silence_ratio > 0.0 {
                coord_alts.push((
                    Action::FillBlanks(FillParams::default()),
                    format!("temporal score {:.2} with blank stretches", fb.temporal),
                ));
            }
            if low_align && m.rms > 0.0 {
                coord_alts.push((
                    Action::VolumeAdjust(VolumeParams::target_rms(t.target_rms)),
                    format!("alignment {:.2} below threshold", fb.alignment),
                ));
            }
            // Vary one half of the primary plan at a time before pairing freely.
            let first_coord = coord.first();
            for n in &noise_alts {
                let parts: Vec<(Action, String)> = std::iter::once(n.clone()).chain(first_coord.cloned()).collect();
                out.push(join(&parts));
            }
            for c in &coord_alts {
                let parts: Vec<(Action, String)> = noise.iter().cloned().chain(std::iter::once(c.clone())).collect();
                out.push(join(&parts));
            }
            for n in &noise_alts {
                for c in &coord_alts {
                    out.push(join(&[n.clone(), c.clone()]));
                }
            }
            for single in noise_alts.iter().chain(&coord_alts) {
                out.push(join(std::slice::from_ref(single)));
            }
        }
        out.push((vec![no_op_action()], "nothing notable; leave the audio as is".into()));
        let mut seen: Vec<Vec<Action>> = Vec::new();
        out.retain(|(actions, _)| {
            if seen.contains(actions) {
                false
            } else {
                seen.push(actions.clone());
                true
            }
        });
        Ok(out)
    }
}

fn join(parts: &[(Action, String)]) -> Candidate {
    (
        parts.iter().map(|p| p.0).collect(),
        parts.iter().map(|p| p.1.as_str()).collect::<Vec<_>>().join("; "),
    )
}

fn edit_actions(c: &Candidate) -> Vec<EditAction> {
    c.0.iter().map(|a| EditAction::new(*a, c.1.clone())).collect()
}

/// Rule-table planning.
///
/// The primary plan comes straight from the captions. With feedback the
/// table also ranks alternatives (the primary with one half swapped, then
/// free pairings, then single actions) and returns the first plan not yet
/// in `ctx.history`; the no-op plan comes last.
pub fn plan_rule(ctx: &PlanContext, planner: &RulePlanner) -> Result<ActionPlan> {
    let candidates = planner.candidates(ctx)?;
    let chosen = candidates
        .iter()
        .find(|c| !ctx.history.contains(&c.0))
        .unwrap_or_else(|| candidates.last().expect("no-op is always a candidate"));
    ActionPlan::new(edit_actions(chosen), PlannerKind::Rule, chosen.1.clone())
}

impl Planner for RulePlanner {
    fn plan(&self, ctx: &PlanContext, _seed: u64) -> Result<ActionPlan> {
        plan_rule(ctx, self)
    }
}

const NOISE_KINDS: [ActionKind; 4] = [
    ActionKind::SpectralSubtraction,
    ActionKind::WienerFilter,
    ActionKind::WaveletDenoise,
    ActionKind::SpectralGate,
];
const COORD_KINDS: [ActionKind; 4] = [
    ActionKind::SpeedMod,
    ActionKind::PitchMod,
    ActionKind::VolumeAdjust,
    ActionKind::FillBlanks,
];

/// A uniformly drawn action of `kind` with uniform parameters.
///
/// Parameters without an upper bound are drawn from a finite span:
/// oversubtraction up to 4, attack up to 50 ms, release up to 500 ms,
/// blank_min_ms up to 500; floor and gate thresholds span [-80, 0] dB.
pub fn random_action(kind: ActionKind, rng: &mut impl Rng) -> Action {
    let noise = |rng: &mut dyn rand::RngCore| NoiseParams {
        noise_percentile: rng.random_range(f64::EPSILON..=50.0),
        oversubtraction: rng.random_range(1.0..=4.0),
        floor_db: rng.random_range(-80.0..=0.0),
        gate_threshold_db: rng.random_range(-80.0..=0.0),
        gate_attack_ms: rng.random_range(0.0..=50.0),
        gate_release_ms: rng.random_range(0.0..=500.0),
    };
    match kind {
        ActionKind::SpectralSubtraction => Action::SpectralSubtraction(noise(rng)),
        ActionKind::WienerFilter => Action::WienerFilter(noise(rng)),
        ActionKind::SpectralGate => Action::SpectralGate(noise(rng)),
        ActionKind::WaveletDenoise => Action::WaveletDenoise(WaveletParams {
            wavelet: if rng.random::<bool>() { Wavelet::Haar } else { Wavelet::Db4 },
            levels: rng.random_range(1..=8),
            threshold_rule: ThresholdRule::Universal,
            threshold_mode: ThresholdMode::Soft,
        }),
        ActionKind::SpeedMod => Action::SpeedMod(SpeedParams {
            speed_factor: rng.random_range(0.5..=2.0),
        }),
        ActionKind::PitchMod => Action::PitchMod(PitchParams {
            pitch_semitones: rng.random_range(-12.0..=12.0),
        }),
        ActionKind::VolumeAdjust => Action::VolumeAdjust(if rng.random::<bool>() {
            VolumeParams::gain_db(rng.random_range(-30.0..=30.0))
        } else {
            VolumeParams::target_rms(rng.random_range(f64::EPSILON..=1.0))
        }),
        ActionKind::FillBlanks => Action::FillBlanks(FillParams {
            blank_min_ms: rng.random_range(20.0..=500.0),
            fill_mode: if rng.random::<bool>() {
                FillMode::ContextNoise
            } else {
                FillMode::ComfortNoise
            },
        }),
    }
}

/// Seeded random plan: one action of any kind, or a noise filter followed by
/// a coordination action, each choice uniform.
pub fn plan_random(_ctx: &PlanContext, seed: u64) -> ActionPlan {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let actions = if rng.random::<bool>() {
        vec![random_action(ActionKind::ALL[rng.random_range(0..8)], &mut rng)]
    } else {
        let n = NOISE_KINDS[rng.random_range(0..4)];
        let c = COORD_KINDS[rng.random_range(0..4)];
        vec![random_action(n, &mut rng), random_action(c, &mut rng)]
    };
    let edits = actions
        .into_iter()
        .map(|a| EditAction::new(a, "random baseline"))
        .collect();
    ActionPlan::new(edits, PlannerKind::Random, "random baseline").expect("random draws stay in range")
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RandomPlanner;

impl Planner for RandomPlanner {
    fn plan(&self, ctx: &PlanContext, seed: u64) -> Result<ActionPlan> {
        Ok(plan_random(ctx, seed))
    }
}

/// Parses a backend action list strictly against the closed vocabulary.
///
/// Each entry is `{"kind": ..., "params": {...}}` with `params` optional;
/// omitted parameters take their defaults. A noise filter listed after a
/// coordination action is moved to the front.
pub fn parse_remote_actions(value: &Value) -> Result<Vec<Action>> {
    let list = value
        .as_array()
        .ok_or_else(|| Error::UnparseablePlan("`actions` must be a list".into()))?;
    if list.is_empty() {
        return Err(Error::UnparseablePlan("empty action list".into()));
    }
    let mut actions = Vec::with_capacity(list.len());
    for item in list {
        let obj = item
            .as_object()
            .ok_or_else(|| Error::UnparseablePlan(format!("action entry is not an object: {item}")))?;
        let kind_str = obj
            .get("kind")
            .and_then(Value::as_str)
            .ok_or_else(|| Error::UnparseablePlan(format!("action entry lacks a `kind`: {item}")))?;
        if let Some(extra) = obj.keys().find(|k| !matches!(k.as_str(), "kind" | "params" | "rationale")) {
            return Err(Error::IllegalAction(format!("unknown action field `{extra}`")));
        }
        let kind = ActionKind::parse(kind_str)
            .ok_or_else(|| Error::IllegalAction(format!("`{kind_str}` is not one of the eight actions")))?;
        let action = match obj.get("params") {
            None => kind.default_action(),
            Some(params) => serde_json::from_value(json!({"kind": kind_str, "params": params}))
                .map_err(|e| Error::IllegalAction(format!("{kind}: {e}")))?,
        };
        debug_assert_eq!(action.kind(), kind);
        actions.push(action);
    }
    actions.sort_by_key(|a| !a.kind().is_noise_filter());
    validate_actions(&actions)?;
    Ok(actions)
}

pub fn plan_remote(ctx: &PlanContext, client: &BackendClient) -> Result<ActionPlan> {
    let resp = client.call(&BackendRequest {
        task: Task::Plan,
        modality: None,
        payload: Value::Null,
        context: serde_json::to_value(ctx)?,
    })?;
    let list = resp
        .actions
        .ok_or_else(|| Error::UnparseablePlan("response lacks `actions`".into()))?;
    let actions = parse_remote_actions(&list)?;
    let rationale = resp.text.unwrap_or_else(|| "remote planner".into());
    ActionPlan::new(
        actions
            .into_iter()
            .map(|a| EditAction::new(a, rationale.clone()))
            .collect(),
        PlannerKind::Remote,
        rationale,
    )
}

#[derive(Debug, Clone)]
pub struct RemotePlanner(pub BackendClient);

impl Planner for RemotePlanner {
    fn plan(&self, ctx: &PlanContext, _seed: u64) -> Result<ActionPlan> {
        plan_remote(ctx, &self.0)
    }
}
