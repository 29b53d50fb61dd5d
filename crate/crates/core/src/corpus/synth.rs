//! Synthetic corpora: class-shaped audio whose loudness follows a pulsed
//! activity series, then damaged by a sampled [`CorruptionSpec`].

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::{write_manifest, AVPairRecord, CorruptionSpec, GapSpec, Provenance};
use crate::audio::{write_wav, AudioBuffer, WavFormat, PIPELINE_RATE_HZ};
use crate::classes::CLASSES;
use crate::error::{Error, Result};
use crate::reflection::REFERENCE_RMS;
use crate::video::VideoFeatureSeries;

/// Extra manifest field naming the undamaged twin of a synthetic pair.
pub const CLEAN_AUDIO_FIELD: &str = "clean_audio_path";

/// Loudness floor under the activity envelope, so quiet stretches are not
/// digital silence.
const ENVELOPE_FLOOR: f64 = 0.05;

pub(crate) fn gaussian_noise(n: usize, sigma: f64, seed: u64) -> Vec<f64> {
    if !(sigma > 0.0) {
        return vec![0.0; n];
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = Normal::new(0.0, sigma).expect("sigma is positive and finite");
    (0..n).map(|_| d.sample(&mut rng)).collect()
}

/// Closed interval to sample uniformly from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Span {
    pub lo: f64,
    pub hi: f64,
}

impl Span {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    fn sample(&self, rng: &mut impl Rng) -> f64 {
        if self.hi > self.lo {
            rng.random_range(self.lo..=self.hi)
        } else {
            self.lo
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorruptionMode {
    /// Each pair gets exactly one of the configured fields.
    Single,
    /// Each pair gets every configured field.
    All,
}

/// Ranges per [`CorruptionSpec`] field. Unset fields are never sampled; with
/// nothing set every pair is clean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthDistribution {
    pub noise_snr_db: Option<Span>,
    /// Delay in seconds; always positive.
    pub offset_s: Option<Span>,
    /// Magnitude of the rate change. Half the draws are inverted, so
    /// `[1.2, 1.5]` yields both speed-ups and slow-downs.
    pub speed_factor: Option<Span>,
    /// Blank length; the start is uniform over the clip's middle.
    pub gap_dur_s: Option<Span>,
    pub gain_db: Option<Span>,
    pub mode: CorruptionMode,
    /// Share of pairs left clean regardless of the ranges.
    pub clean_fraction: f64,
}

impl Default for SynthDistribution {
    fn default() -> Self {
        Self {
            noise_snr_db: None,
            offset_s: None,
            speed_factor: None,
            gap_dur_s: None,
            gain_db: None,
            mode: CorruptionMode::Single,
            clean_fraction: 0.0,
        }
    }
}

impl SynthDistribution {
    /// One corruption per pair, drawn from every kind the corpus supports.
    pub fn single_corruption() -> Self {
        Self {
            noise_snr_db: Some(Span::new(-5.0, 10.0)),
            offset_s: Some(Span::new(0.1, 0.5)),
            speed_factor: Some(Span::new(1.2, 1.5)),
            gap_dur_s: Some(Span::new(0.3, 0.6)),
            gain_db: Some(Span::new(-25.0, -12.0)),
            mode: CorruptionMode::Single,
            clean_fraction: 0.0,
        }
    }

    /// Noise on every pair, plus a timing fault the planner can repair.
    pub fn mixture() -> Self {
        Self {
            noise_snr_db: Some(Span::new(-5.0, 5.0)),
            speed_factor: Some(Span::new(1.2, 1.5)),
            mode: CorruptionMode::All,
            ..Self::default()
        }
    }

    pub fn is_empty(&self) -> bool {
        self.noise_snr_db.is_none()
            && self.offset_s.is_none()
            && self.speed_factor.is_none()
            && self.gap_dur_s.is_none()
            && self.gain_db.is_none()
    }

    pub fn validate(&self) -> Result<()> {
        let spans = [
            ("noise_snr_db", self.noise_snr_db),
            ("offset_s", self.offset_s),
            ("speed_factor", self.speed_factor),
            ("gap_dur_s", self.gap_dur_s),
            ("gain_db", self.gain_db),
        ];
        for (name, s) in spans {
            if let Some(s) = s {
                if !(s.lo.is_finite() && s.hi.is_finite() && s.lo <= s.hi) {
                    return Err(Error::InvalidValue(format!("{name} span {} to {}", s.lo, s.hi)));
                }
            }
        }
        if let Some(s) = self.speed_factor {
            if !(s.lo >= 1.0 && s.hi <= 2.0) {
                return Err(Error::range("speed_factor span", s.lo, "[1, 2]"));
            }
        }
        if let Some(s) = self.offset_s {
            if s.lo < 0.0 {
                return Err(Error::range("offset_s span", s.lo, ">= 0"));
            }
        }
        if let Some(s) = self.gap_dur_s {
            if s.lo <= 0.0 {
                return Err(Error::range("gap_dur_s span", s.lo, "> 0"));
            }
        }
        if !(0.0..=1.0).contains(&self.clean_fraction) {
            return Err(Error::range("clean_fraction", self.clean_fraction, "[0, 1]"));
        }
        Ok(())
    }

    /// Draws a spec for a clip of `duration_s` seconds.
    pub fn sample(&self, duration_s: f64, rng: &mut impl Rng) -> CorruptionSpec {
        let seed = rng.random::<u64>();
        let mut spec = CorruptionSpec::no_op(seed);
        if self.is_empty() || (self.clean_fraction > 0.0 && rng.random_bool(self.clean_fraction)) {
            return spec;
        }
        spec.gain_db = None;
        let mut fields: Vec<u8> = Vec::new();
        for (i, on) in [
            self.noise_snr_db.is_some(),
            self.offset_s.is_some(),
            self.speed_factor.is_some(),
            self.gap_dur_s.is_some(),
            self.gain_db.is_some(),
        ]
        .into_iter()
        .enumerate()
        {
            if on {
                fields.push(i as u8);
            }
        }
        if self.mode == CorruptionMode::Single {
            fields = vec![fields[rng.random_range(0..fields.len())]];
        }
        for f in fields {
            match f {
                0 => spec.noise_snr_db = self.noise_snr_db.map(|s| s.sample(rng)),
                1 => spec.offset_s = self.offset_s.map(|s| s.sample(rng)),
                2 => {
                    let m = self.speed_factor.map(|s| s.sample(rng)).unwrap_or(1.0);
                    spec.speed_factor = Some(if rng.random_bool(0.5) { m } else { 1.0 / m });
                }
                3 => {
                    let dur = self.gap_dur_s.map(|s| s.sample(rng)).unwrap_or(0.0);
                    let dur = dur.min(duration_s * 0.5);
                    let start = rng.random_range(0.25 * duration_s..=(0.75 * duration_s - dur).max(0.25 * duration_s));
                    spec.gap = Some(GapSpec { start_s: start, dur_s: dur });
                }
                _ => spec.gain_db = self.gain_db.map(|s| s.sample(rng)),
            }
        }
        spec
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n: usize,
    pub seed: u64,
    pub duration_s: f64,
    pub frame_rate_hz: f64,
    pub distribution: SynthDistribution,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n: 50,
            seed: 0,
            duration_s: 3.0,
            frame_rate_hz: 25.0,
            distribution: SynthDistribution::single_corruption(),
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::range("n", 0.0, ">= 1"));
        }
        if !(self.duration_s >= 0.5 && self.duration_s <= 60.0) {
            return Err(Error::range("duration_s", self.duration_s, "[0.5, 60]"));
        }
        if !(self.frame_rate_hz > 0.0 && self.frame_rate_hz <= 200.0) {
            return Err(Error::range("frame_rate_hz", self.frame_rate_hz, "(0, 200]"));
        }
        self.distribution.validate()
    }
}

/// One generated pair with both audio versions in memory.
#[derive(Debug, Clone)]
pub struct SynthPair {
    pub record: AVPairRecord,
    pub clean: AudioBuffer,
    pub corrupted: AudioBuffer,
}

pub fn pair_id(index: usize) -> String {
    format!("pair{index:05}")
}

/// Sum of Gaussian bumps (events) times a slow sway, one value per frame.
pub fn activity_series(frames: usize, rate_hz: f64, rng: &mut impl Rng) -> Vec<f64> {
    let dur = frames as f64 / rate_hz;
    let mut events = Vec::new();
    let mut t = rng.random_range(0.1..0.4);
    while t < dur {
        let amp = rng.random_range(0.4..1.0);
        let sigma = rng.random_range(0.05..0.12);
        events.push((t, amp, sigma));
        t += rng.random_range(0.3..0.8);
    }
    let period = rng.random_range(2.0..4.0);
    let phase = rng.random_range(0.0..std::f64::consts::TAU);
    (0..frames)
        .map(|i| {
            let t = i as f64 / rate_hz;
            let e: f64 = events
                .iter()
                .map(|(c, a, s)| a * (-0.5 * ((t - c) / s).powi(2)).exp())
                .sum();
            let sway = 0.7 + 0.3 * (std::f64::consts::TAU * t / period + phase).sin();
            e * sway
        })
        .collect()
}

/// Class-shaped audio whose per-frame loudness tracks `activity`.
pub fn render_pair_audio(label: &str, activity: &[f64], rate_hz: f64, n: usize, seed: u64) -> Result<AudioBuffer> {
    if activity.is_empty() {
        return Err(Error::EmptyFeatures);
    }
    let class = crate::classes::class(label)
        .ok_or_else(|| Error::InvalidValue(format!("unknown class label {label:?}")))?;
    let carrier = class.render(n, PIPELINE_RATE_HZ, seed);
    // Activity value i sits at the centre of tick i; interpolate between centres.
    let last = activity.len() - 1;
    let env: Vec<f64> = (0..n)
        .map(|j| {
            let pos = ((j as f64 + 0.5) / PIPELINE_RATE_HZ as f64 * rate_hz - 0.5).clamp(0.0, last as f64);
            let a = pos.floor() as usize;
            let b = (a + 1).min(last);
            let f = pos - a as f64;
            (1.0 - f) * activity[a] + f * activity[b]
        })
        .collect();
    let x: Vec<f64> = carrier
        .iter()
        .zip(&env)
        .map(|(c, a)| c * (ENVELOPE_FLOOR + a.max(0.0)))
        .collect();
    let rms = crate::audio::rms(&x);
    let scale = if rms > 0.0 { REFERENCE_RMS / rms } else { 0.0 };
    Ok(AudioBuffer::from_samples_clamped(
        x.into_iter().map(|v| v * scale).collect(),
        PIPELINE_RATE_HZ,
    ))
}

fn pair_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64 + 1);
    rng
}

/// The `index`-th clean pair of a corpus, before corruption.
pub fn clean_pair(cfg: &SynthConfig, index: usize) -> Result<(AudioBuffer, VideoFeatureSeries, ChaCha8Rng)> {
    let mut rng = pair_rng(cfg.seed, index);
    let label = CLASSES[rng.random_range(0..CLASSES.len())].label;
    let frames = (cfg.duration_s * cfg.frame_rate_hz).round().max(1.0) as usize;
    let activity = activity_series(frames, cfg.frame_rate_hz, &mut rng);
    let n = (cfg.duration_s * PIPELINE_RATE_HZ as f64).round() as usize;
    let audio = render_pair_audio(label, &activity, cfg.frame_rate_hz, n, rng.random())?;
    let video = VideoFeatureSeries::new(cfg.frame_rate_hz, activity, vec![label.to_string()])?;
    Ok((audio, video, rng))
}

/// Generates the corpus in memory. Pair `i` depends only on `(seed, i)`.
pub fn synth_pairs(cfg: &SynthConfig) -> Result<Vec<SynthPair>> {
    cfg.validate()?;
    (0..cfg.n)
        .map(|i| {
            let (clean, video, mut rng) = clean_pair(cfg, i)?;
            let spec = cfg.distribution.sample(cfg.duration_s, &mut rng);
            let corrupted = spec.apply(&clean)?;
            let id = pair_id(i);
            let mut extra = Map::new();
            extra.insert(
                CLEAN_AUDIO_FIELD.into(),
                Value::String(format!("clean/{id}.wav")),
            );
            Ok(SynthPair {
                record: AVPairRecord {
                    audio_path: PathBuf::from(format!("audio/{id}.wav")),
                    pair_id: id,
                    video_features: video,
                    ground_truth: Some(spec),
                    provenance: Provenance::Synthetic,
                    extra,
                },
                clean,
                corrupted,
            })
        })
        .collect()
}

/// Writes `audio/`, `clean/` and `manifest.jsonl` under `out_dir`.
pub fn synth_corpus(cfg: &SynthConfig, out_dir: &Path) -> Result<Vec<AVPairRecord>> {
    let pairs = synth_pairs(cfg)?;
    for p in &pairs {
        write_wav(&out_dir.join(&p.record.audio_path), &p.corrupted, WavFormat::Pcm16)?;
        write_wav(
            &out_dir.join(format!("clean/{}.wav", p.record.pair_id)),
            &p.clean,
            WavFormat::Pcm16,
        )?;
    }
    let records: Vec<AVPairRecord> = pairs.into_iter().map(|p| p.record).collect();
    write_manifest(&records, &out_dir.join("manifest.jsonl"))?;
    Ok(records)
}
