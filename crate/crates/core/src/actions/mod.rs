//! The eight audio-editing actions.
//!
//! Four remove background interference (spectral subtraction, Wiener
//! filtering, wavelet denoising, spectral gating) and four coordinate the
//! audio with the video (speed, pitch, volume, blank filling). Each is a
//! pure `AudioBuffer -> AudioBuffer` transform driven by an explicit
//! parameter record; randomised actions take an explicit seed.
//!
//! Actions serialise as `{"kind": ..., "params": {...}, "rationale": ...}`.

mod coord;
mod noise;
mod vocoder;
pub mod wavelet;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::audio::AudioBuffer;
use crate::error::{Error, Result};

pub use coord::{fill_blanks, volume_adjust, BLANK_ENVELOPE_THRESHOLD};
pub use noise::{estimate_noise, spectral_gate, spectral_subtraction, wiener_filter};
pub(crate) use noise::quiet_frames;
pub use vocoder::{pitch_mod, speed_mod, time_stretch};
pub use wavelet::{wavelet_denoise, Wavelet};

/// Parameters shared by the three STFT-domain noise filters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseParams {
    /// Percentage of lowest-energy frames averaged into the noise estimate.
    pub noise_percentile: f64,
    /// Spectral subtraction only.
    pub oversubtraction: f64,
    pub floor_db: f64,
    /// Spectral gate only; relative to each bin's peak magnitude.
    pub gate_threshold_db: f64,
    pub gate_attack_ms: f64,
    pub gate_release_ms: f64,
}

impl Default for NoiseParams {
    fn default() -> Self {
        Self {
            noise_percentile: 10.0,
            oversubtraction: 1.5,
            floor_db: -40.0,
            gate_threshold_db: -35.0,
            gate_attack_ms: 5.0,
            gate_release_ms: 50.0,
        }
    }
}

impl NoiseParams {
    pub fn validate(&self) -> Result<()> {
        check(
            "noise_percentile",
            self.noise_percentile,
            self.noise_percentile > 0.0 && self.noise_percentile <= 50.0,
            "(0, 50]",
        )?;
        check(
            "oversubtraction",
            self.oversubtraction,
            self.oversubtraction >= 1.0,
            "[1, inf)",
        )?;
        check("floor_db", self.floor_db, self.floor_db <= 0.0, "(-inf, 0]")?;
        check(
            "gate_threshold_db",
            self.gate_threshold_db,
            self.gate_threshold_db.is_finite(),
            "finite",
        )?;
        check(
            "gate_attack_ms",
            self.gate_attack_ms,
            self.gate_attack_ms >= 0.0,
            "[0, inf)",
        )?;
        check(
            "gate_release_ms",
            self.gate_release_ms,
            self.gate_release_ms >= 0.0,
            "[0, inf)",
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdRule {
    #[default]
    Universal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdMode {
    #[default]
    Soft,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WaveletParams {
    pub wavelet: Wavelet,
    pub levels: u32,
    pub threshold_rule: ThresholdRule,
    pub threshold_mode: ThresholdMode,
}

impl Default for WaveletParams {
    fn default() -> Self {
        Self {
            wavelet: Wavelet::Db4,
            levels: 5,
            threshold_rule: ThresholdRule::Universal,
            threshold_mode: ThresholdMode::Soft,
        }
    }
}

impl WaveletParams {
    pub fn validate(&self) -> Result<()> {
        check(
            "levels",
            self.levels as f64,
            (1..=8).contains(&self.levels),
            "[1, 8]",
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpeedParams {
    /// Playback-rate multiplier; output duration is `input / speed_factor`.
    pub speed_factor: f64,
}

impl Default for SpeedParams {
    fn default() -> Self {
        Self { speed_factor: 1.0 }
    }
}

impl SpeedParams {
    pub fn validate(&self) -> Result<()> {
        check(
            "speed_factor",
            self.speed_factor,
            (0.5..=2.0).contains(&self.speed_factor),
            "[0.5, 2.0]",
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PitchParams {
    pub pitch_semitones: f64,
}

impl PitchParams {
    pub fn validate(&self) -> Result<()> {
        check(
            "pitch_semitones",
            self.pitch_semitones,
            (-12.0..=12.0).contains(&self.pitch_semitones),
            "[-12, 12]",
        )
    }
}

/// Exactly one of `gain_db` and `target_rms` must be set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VolumeParams {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gain_db: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_rms: Option<f64>,
}

impl Default for VolumeParams {
    fn default() -> Self {
        Self::target_rms(0.1)
    }
}

impl VolumeParams {
    pub fn gain_db(db: f64) -> Self {
        Self {
            gain_db: Some(db),
            target_rms: None,
        }
    }

    pub fn target_rms(rms: f64) -> Self {
        Self {
            gain_db: None,
            target_rms: Some(rms),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match (self.gain_db, self.target_rms) {
            (Some(g), None) => check("gain_db", g, (-30.0..=30.0).contains(&g), "[-30, 30]"),
            (None, Some(r)) => check("target_rms", r, r > 0.0 && r <= 1.0, "(0, 1]"),
            _ => Err(Error::InvalidValue(
                "volume_adjust needs exactly one of gain_db or target_rms".into(),
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FillMode {
    #[default]
    ContextNoise,
    ComfortNoise,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FillParams {
    pub blank_min_ms: f64,
    pub fill_mode: FillMode,
}

impl Default for FillParams {
    fn default() -> Self {
        Self {
            blank_min_ms: 120.0,
            fill_mode: FillMode::ContextNoise,
        }
    }
}

impl FillParams {
    pub fn validate(&self) -> Result<()> {
        check(
            "blank_min_ms",
            self.blank_min_ms,
            self.blank_min_ms >= 20.0 && self.blank_min_ms.is_finite(),
            "[20, inf)",
        )
    }
}

fn check(name: &'static str, value: f64, ok: bool, range: &'static str) -> Result<()> {
    if ok && value.is_finite() {
        Ok(())
    } else {
        Err(Error::range(name, value, range))
    }
}

/// One action with its parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params", rename_all = "snake_case")]
pub enum Action {
    SpectralSubtraction(NoiseParams),
    WienerFilter(NoiseParams),
    WaveletDenoise(WaveletParams),
    SpectralGate(NoiseParams),
    SpeedMod(SpeedParams),
    PitchMod(PitchParams),
    VolumeAdjust(VolumeParams),
    FillBlanks(FillParams),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionKind {
    SpectralSubtraction,
    WienerFilter,
    WaveletDenoise,
    SpectralGate,
    SpeedMod,
    PitchMod,
    VolumeAdjust,
    FillBlanks,
}

impl ActionKind {
    pub const ALL: [ActionKind; 8] = [
        ActionKind::SpectralSubtraction,
        ActionKind::WienerFilter,
        ActionKind::WaveletDenoise,
        ActionKind::SpectralGate,
        ActionKind::SpeedMod,
        ActionKind::PitchMod,
        ActionKind::VolumeAdjust,
        ActionKind::FillBlanks,
    ];

    pub fn is_noise_filter(self) -> bool {
        matches!(
            self,
            ActionKind::SpectralSubtraction
                | ActionKind::WienerFilter
                | ActionKind::WaveletDenoise
                | ActionKind::SpectralGate
        )
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ActionKind::SpectralSubtraction => "spectral_subtraction",
            ActionKind::WienerFilter => "wiener_filter",
            ActionKind::WaveletDenoise => "wavelet_denoise",
            ActionKind::SpectralGate => "spectral_gate",
            ActionKind::SpeedMod => "speed_mod",
            ActionKind::PitchMod => "pitch_mod",
            ActionKind::VolumeAdjust => "volume_adjust",
            ActionKind::FillBlanks => "fill_blanks",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.as_str() == s)
    }

    /// The action with its default parameters.
    pub fn default_action(self) -> Action {
        match self {
            ActionKind::SpectralSubtraction => Action::SpectralSubtraction(NoiseParams::default()),
            ActionKind::WienerFilter => Action::WienerFilter(NoiseParams::default()),
            ActionKind::WaveletDenoise => Action::WaveletDenoise(WaveletParams::default()),
            ActionKind::SpectralGate => Action::SpectralGate(NoiseParams::default()),
            ActionKind::SpeedMod => Action::SpeedMod(SpeedParams::default()),
            ActionKind::PitchMod => Action::PitchMod(PitchParams::default()),
            ActionKind::VolumeAdjust => Action::VolumeAdjust(VolumeParams::default()),
            ActionKind::FillBlanks => Action::FillBlanks(FillParams::default()),
        }
    }
}

impl fmt::Display for ActionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl Action {
    pub fn kind(&self) -> ActionKind {
        match self {
            Action::SpectralSubtraction(_) => ActionKind::SpectralSubtraction,
            Action::WienerFilter(_) => ActionKind::WienerFilter,
            Action::WaveletDenoise(_) => ActionKind::WaveletDenoise,
            Action::SpectralGate(_) => ActionKind::SpectralGate,
            Action::SpeedMod(_) => ActionKind::SpeedMod,
            Action::PitchMod(_) => ActionKind::PitchMod,
            Action::VolumeAdjust(_) => ActionKind::VolumeAdjust,
            Action::FillBlanks(_) => ActionKind::FillBlanks,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Action::SpectralSubtraction(p) | Action::WienerFilter(p) | Action::SpectralGate(p) => {
                p.validate()
            }
            Action::WaveletDenoise(p) => p.validate(),
            Action::SpeedMod(p) => p.validate(),
            Action::PitchMod(p) => p.validate(),
            Action::VolumeAdjust(p) => p.validate(),
            Action::FillBlanks(p) => p.validate(),
        }
    }

    /// Runs the action. `seed` drives any randomised component.
    pub fn apply(&self, audio: &AudioBuffer, seed: u64) -> Result<AudioBuffer> {
        if audio.is_empty() {
            return Err(Error::EmptyAudio);
        }
        match self {
            Action::SpectralSubtraction(p) => spectral_subtraction(audio, p),
            Action::WienerFilter(p) => wiener_filter(audio, p),
            Action::WaveletDenoise(p) => wavelet_denoise(audio, p),
            Action::SpectralGate(p) => spectral_gate(audio, p),
            Action::SpeedMod(p) => speed_mod(audio, p),
            Action::PitchMod(p) => pitch_mod(audio, p),
            Action::VolumeAdjust(p) => volume_adjust(audio, p),
            Action::FillBlanks(p) => fill_blanks(audio, p, seed),
        }
    }
}

/// An action chosen by a planner, with the planner's stated reason.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EditAction {
    #[serde(flatten)]
    pub action: Action,
    #[serde(default)]
    pub rationale: String,
}

impl EditAction {
    pub fn new(action: Action, rationale: impl Into<String>) -> Self {
        Self {
            action,
            rationale: rationale.into(),
        }
    }

    pub fn kind(&self) -> ActionKind {
        self.action.kind()
    }
}

/// Applies actions in order, deriving a distinct seed for each step.
pub fn apply_chain(audio: &AudioBuffer, actions: &[Action], seed: u64) -> Result<AudioBuffer> {
    let mut current = audio.clone();
    for (i, action) in actions.iter().enumerate() {
        action.validate()?;
        current = action.apply(&current, seed.wrapping_add(i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))?;
    }
    Ok(current)
}
