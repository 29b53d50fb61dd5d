//! Pair manifests, the synthetic corruption generator, and the corpus-level
//! experiments (true/false mixture study, random-action ablation, recovery).

mod manifest;
pub mod study;
pub mod synth;

use serde::{Deserialize, Serialize};

use crate::actions::{time_stretch, SpeedParams};
use crate::audio::AudioBuffer;
use crate::error::{Error, Result};

pub use manifest::{
    canonical_json, manifest_root, parse_manifest, read_manifest, render_manifest, to_canonical_line,
    validate_audio_paths, write_manifest, AVPairRecord, Provenance,
};
pub(crate) use manifest::write_text;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GapSpec {
    pub start_s: f64,
    pub dur_s: f64,
}

/// Damage applied to a clean pair's audio.
///
/// Applied in a fixed order: speed, offset, gap, gain, then additive noise
/// (its SNR is measured against the audio as it stands at that point).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorruptionSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_snr_db: Option<f64>,
    /// Positive delays the audio; the clip keeps its length.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub offset_s: Option<f64>,
    /// Playback-rate change; duration becomes `original / speed_factor`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub speed_factor: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gap: Option<GapSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gain_db: Option<f64>,
    pub seed: u64,
}

/// Which single field a spec exercises.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorruptionClass {
    Clean,
    Noise,
    Offset,
    Speed,
    Gap,
    Gain,
    Mixed,
}

impl std::fmt::Display for CorruptionClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = serde_json::to_value(self).ok();
        f.write_str(s.as_ref().and_then(|v| v.as_str()).unwrap_or("?"))
    }
}

impl CorruptionSpec {
    /// The spec that leaves audio untouched: a 0 dB gain.
    pub fn no_op(seed: u64) -> Self {
        Self {
            noise_snr_db: None,
            offset_s: None,
            speed_factor: None,
            gap: None,
            gain_db: Some(0.0),
            seed,
        }
    }

    pub fn is_no_op(&self) -> bool {
        self.noise_snr_db.is_none()
            && self.offset_s.is_none()
            && self.speed_factor.is_none()
            && self.gap.is_none()
            && self.gain_db.is_none_or(|g| g == 0.0)
    }

    pub fn class(&self) -> CorruptionClass {
        if self.is_no_op() {
            return CorruptionClass::Clean;
        }
        let set = [
            (self.noise_snr_db.is_some(), CorruptionClass::Noise),
            (self.offset_s.is_some(), CorruptionClass::Offset),
            (self.speed_factor.is_some(), CorruptionClass::Speed),
            (self.gap.is_some(), CorruptionClass::Gap),
            (self.gain_db.is_some_and(|g| g != 0.0), CorruptionClass::Gain),
        ];
        let mut fired = set.iter().filter(|(on, _)| *on).map(|(_, c)| *c);
        match (fired.next(), fired.next()) {
            (Some(c), None) => c,
            _ => CorruptionClass::Mixed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: String| Err(Error::InvalidValue(format!("corruption spec: {what}")));
        if self.noise_snr_db.is_none()
            && self.offset_s.is_none()
            && self.speed_factor.is_none()
            && self.gap.is_none()
            && self.gain_db.is_none()
        {
            return bad("at least one field must be set".into());
        }
        if let Some(s) = self.noise_snr_db {
            if !s.is_finite() {
                return bad(format!("noise_snr_db {s}"));
            }
        }
        if let Some(o) = self.offset_s {
            if !o.is_finite() {
                return bad(format!("offset_s {o}"));
            }
        }
        if let Some(f) = self.speed_factor {
            SpeedParams { speed_factor: f }.validate()?;
        }
        if let Some(g) = self.gap {
            if !(g.start_s >= 0.0 && g.dur_s > 0.0 && g.dur_s.is_finite()) {
                return bad(format!("gap {g:?}"));
            }
        }
        if let Some(g) = self.gain_db {
            if !(-30.0..=30.0).contains(&g) {
                return Err(Error::range("gain_db", g, "[-30, 30]"));
            }
        }
        Ok(())
    }

    /// Damages `clean`. Deterministic in `(clean, self)`.
    pub fn apply(&self, clean: &AudioBuffer) -> Result<AudioBuffer> {
        self.validate()?;
        let sr = clean.sample_rate_hz();
        let mut x = clean.samples().to_vec();
        if let Some(f) = self.speed_factor {
            if f != 1.0 {
                x = time_stretch(clean, f)?;
            }
        }
        if let Some(off) = self.offset_s {
            let shift = (off.abs() * sr as f64).round() as usize;
            let n = x.len();
            let shift = shift.min(n);
            if off > 0.0 {
                x.rotate_right(shift);
                x[..shift].iter_mut().for_each(|v| *v = 0.0);
            } else if off < 0.0 {
                x.rotate_left(shift);
                x[n - shift..].iter_mut().for_each(|v| *v = 0.0);
            }
        }
        if let Some(g) = self.gap {
            let lo = ((g.start_s * sr as f64).round() as usize).min(x.len());
            let hi = (((g.start_s + g.dur_s) * sr as f64).round() as usize).min(x.len());
            x[lo..hi].iter_mut().for_each(|v| *v = 0.0);
        }
        if let Some(db) = self.gain_db {
            let g = 10f64.powf(db / 20.0);
            x.iter_mut().for_each(|v| *v *= g);
        }
        if let Some(snr) = self.noise_snr_db {
            let p = x.iter().map(|v| v * v).sum::<f64>() / x.len().max(1) as f64;
            let sigma = (p / 10f64.powf(snr / 10.0)).sqrt();
            let noise = synth::gaussian_noise(x.len(), sigma, self.seed);
            x.iter_mut().zip(noise).for_each(|(v, n)| *v += n);
        }
        Ok(AudioBuffer::from_samples_clamped(x, sr))
    }
}
