//! Scoring an (audio, video) pair: semantic alignment and temporal sync.
//!
//! The proxy scorers work on measurable signal structure. Alignment compares
//! the audio's time-averaged log-magnitude profile with a reference profile
//! for each video label; temporal sync correlates the audio energy envelope
//! with the video activity series at lag zero. Both land in `[0, 1]`.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::{Arc, OnceLock};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::audio::{AudioBuffer, PIPELINE_RATE_HZ};
use crate::backend::{BackendClient, BackendRequest, Task};
use crate::caption::spectral_centroid_hz;
use crate::classes::CLASSES;
use crate::error::{Error, Result};
use crate::spectral::{compute_spectrogram, energy_envelope, StftConfig};
use crate::video::VideoFeatureSeries;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReflectionScores {
    pub alignment: f64,
    pub temporal: f64,
}

impl ReflectionScores {
    pub fn min(&self) -> f64 {
        self.alignment.min(self.temporal)
    }
}

/// Reference spectrum for one label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassProfile {
    pub centroid_hz: f64,
    /// Time-averaged 128-bin log-magnitude profile.
    pub log_profile: Vec<f64>,
}

pub const PROFILE_FORMAT: &str = "avalign-class-profiles";
pub const PROFILE_VERSION: u32 = 1;
/// Length of the rendering each builtin profile is measured from.
const PROFILE_RENDER_SAMPLES: usize = 32_000;
/// RMS level shared by profile renderings and the synthetic corpus.
pub const REFERENCE_RMS: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassProfiles {
    pub format: String,
    pub version: u32,
    pub profiles: BTreeMap<String, ClassProfile>,
}

impl Default for ClassProfiles {
    fn default() -> Self {
        Self {
            format: PROFILE_FORMAT.into(),
            version: PROFILE_VERSION,
            profiles: BTreeMap::new(),
        }
    }
}

/// Measures a reference profile from audio.
pub fn measure_profile(audio: &AudioBuffer) -> Result<ClassProfile> {
    let spec = compute_spectrogram(audio, &StftConfig::default())?;
    Ok(ClassProfile {
        centroid_hz: spectral_centroid_hz(audio)?,
        log_profile: spec.log_view().time_averaged_profile(),
    })
}

impl ClassProfiles {
    /// Profiles of the builtin sound classes, measured once per process.
    pub fn builtin() -> Arc<ClassProfiles> {
        static TABLE: OnceLock<Arc<ClassProfiles>> = OnceLock::new();
        TABLE
            .get_or_init(|| {
                let mut table = ClassProfiles::default();
                for (i, class) in CLASSES.iter().enumerate() {
                    let x: Vec<f64> = class
                        .render(PROFILE_RENDER_SAMPLES, PIPELINE_RATE_HZ, 0xC1A5 + i as u64)
                        .into_iter()
                        .map(|v| v * REFERENCE_RMS)
                        .collect();
                    let audio = AudioBuffer::from_samples_clamped(x, PIPELINE_RATE_HZ);
                    let profile = measure_profile(&audio).expect("rendering is long enough");
                    table.profiles.insert(class.label.to_string(), profile);
                }
                Arc::new(table)
            })
            .clone()
    }

    pub fn get(&self, label: &str) -> Option<&ClassProfile> {
        self.profiles.get(label)
    }

    pub fn insert(&mut self, label: impl Into<String>, profile: ClassProfile) {
        self.profiles.insert(label.into(), profile);
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let table: ClassProfiles = serde_json::from_str(&text)?;
        if table.format != PROFILE_FORMAT || table.version != PROFILE_VERSION {
            return Err(Error::Config(format!(
                "{}: expected {PROFILE_FORMAT} version {PROFILE_VERSION}, found {} version {}",
                path.display(),
                table.format,
                table.version
            )));
        }
        let bins = StftConfig::default().n_freq_bins;
        if let Some((label, _)) = table
            .profiles
            .iter()
            .find(|(_, p)| p.log_profile.len() != bins || p.log_profile.iter().any(|v| !v.is_finite()))
        {
            return Err(Error::Config(format!(
                "{}: profile `{label}` must hold {bins} finite values",
                path.display()
            )));
        }
        Ok(table)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(&serde_json::to_value(self)?)?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone)]
pub struct ProxyScorer {
    pub profiles: Arc<ClassProfiles>,
    /// Score alignment from the envelope when no label has a profile.
    pub envelope_fallback: bool,
}

impl Default for ProxyScorer {
    fn default() -> Self {
        Self {
            profiles: ClassProfiles::builtin(),
            envelope_fallback: true,
        }
    }
}

#[derive(Debug, Clone)]
pub enum ScorerKind {
    Proxy(ProxyScorer),
    Remote(BackendClient),
}

impl Default for ScorerKind {
    fn default() -> Self {
        ScorerKind::Proxy(ProxyScorer::default())
    }
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        (dot / (na * nb)).clamp(-1.0, 1.0)
    }
}

fn unit(r: f64) -> f64 {
    ((1.0 + r) / 2.0).clamp(0.0, 1.0)
}

/// Temporal score plus whether either series was flat.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TemporalScore {
    pub value: f64,
    pub degenerate: bool,
}

fn check_durations(audio: &AudioBuffer, v: &VideoFeatureSeries) -> Result<()> {
    let (a, d) = (audio.duration_s(), v.duration_s());
    if a > 4.0 * d || d > 4.0 * a {
        return Err(Error::DurationMismatch {
            audio_s: a,
            video_s: d,
        });
    }
    Ok(())
}

fn znorm(x: &[f64]) -> Option<Vec<f64>> {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let std = (x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    // Relative guard: float residue on a constant series is not variance.
    if !(std > 1e-12 * (1.0 + mean.abs())) {
        return None;
    }
    Some(x.iter().map(|v| (v - mean) / std).collect())
}

fn proxy_temporal(audio: &AudioBuffer, v: &VideoFeatureSeries) -> Result<TemporalScore> {
    if audio.is_empty() {
        return Err(Error::EmptyAudio);
    }
    v.validate()?;
    check_durations(audio, v)?;
    let rate = v.frame_rate_hz.min(audio.sample_rate_hz() as f64);
    let env = energy_envelope(audio, rate)?;
    let n = env.len().min(v.activity.len());
    match (znorm(&env[..n]), znorm(&v.activity[..n])) {
        (Some(a), Some(b)) => {
            let r = a.iter().zip(&b).map(|(x, y)| x * y).sum::<f64>() / n as f64;
            Ok(TemporalScore {
                value: unit(r),
                degenerate: false,
            })
        }
        _ => {
            log::warn!("temporal score on a flat series; returning 0.5");
            Ok(TemporalScore {
                value: 0.5,
                degenerate: true,
            })
        }
    }
}

fn proxy_alignment(audio: &AudioBuffer, v: &VideoFeatureSeries, p: &ProxyScorer) -> Result<f64> {
    if audio.is_empty() {
        return Err(Error::EmptyAudio);
    }
    v.validate()?;
    let known: Vec<&ClassProfile> = v.labels.iter().filter_map(|l| p.profiles.get(l)).collect();
    if known.is_empty() {
        if !p.envelope_fallback {
            return Err(Error::UnknownLabelNoFallback {
                labels: v.labels.clone(),
            });
        }
        log::debug!("no profile for labels {:?}; envelope-only alignment", v.labels);
        return Ok(proxy_temporal(audio, v)?.value);
    }
    let spec = compute_spectrogram(audio, &StftConfig::default())?;
    let profile = spec.log_view().time_averaged_profile();
    Ok(known
        .iter()
        .map(|c| unit(cosine(&profile, &c.log_profile)))
        .fold(0.0, f64::max))
}

fn remote_scores(
    audio: &AudioBuffer,
    v: &VideoFeatureSeries,
    client: &BackendClient,
) -> Result<ReflectionScores> {
    if audio.is_empty() {
        return Err(Error::EmptyAudio);
    }
    v.validate()?;
    let resp = client.call(&BackendRequest {
        task: Task::Score,
        modality: Some("audio+video".into()),
        payload: json!({
            "audio": client.audio_payload(audio)?,
            "video": client.video_payload(v)?,
        }),
        context: Value::Null,
    })?;
    let scores = resp
        .scores
        .ok_or_else(|| Error::BackendMalformedResponse("score response lacks `scores`".into()))?;
    let field = |name: &str| {
        scores
            .get(name)
            .and_then(Value::as_f64)
            .filter(|x| x.is_finite())
            .map(|x| x.clamp(0.0, 1.0))
            .ok_or_else(|| Error::BackendMalformedResponse(format!("scores.{name} missing or not a number")))
    };
    Ok(ReflectionScores {
        alignment: field("alignment")?,
        temporal: field("temporal")?,
    })
}

/// Semantic match between the audio and the video labels.
pub fn score_alignment(audio: &AudioBuffer, v: &VideoFeatureSeries, s: &ScorerKind) -> Result<f64> {
    match s {
        ScorerKind::Proxy(p) => proxy_alignment(audio, v, p),
        ScorerKind::Remote(c) => Ok(remote_scores(audio, v, c)?.alignment),
    }
}

/// Lag-zero correlation of the audio envelope with the activity series.
///
/// Series are truncated to the shorter length. A flat series on either side
/// yields 0.5 with `degenerate` set. Durations more than 4x apart fail.
pub fn score_temporal(
    audio: &AudioBuffer,
    v: &VideoFeatureSeries,
    s: &ScorerKind,
) -> Result<TemporalScore> {
    match s {
        ScorerKind::Proxy(_) => proxy_temporal(audio, v),
        ScorerKind::Remote(c) => Ok(TemporalScore {
            value: remote_scores(audio, v, c)?.temporal,
            degenerate: false,
        }),
    }
}

pub fn reflect(audio: &AudioBuffer, v: &VideoFeatureSeries, s: &ScorerKind) -> Result<ReflectionScores> {
    match s {
        ScorerKind::Proxy(p) => Ok(ReflectionScores {
            alignment: proxy_alignment(audio, v, p)?,
            temporal: proxy_temporal(audio, v)?.value,
        }),
        ScorerKind::Remote(c) => remote_scores(audio, v, c),
    }
}
