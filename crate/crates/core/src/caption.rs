//! Independent textual descriptions of each modality.
//!
//! The builtin describers measure a small feature set and render it through
//! a fixed template, so identical inputs give byte-identical captions.
//! `describe_audio` never sees the video and `describe_video` never sees the
//! audio.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::actions::{quiet_frames, BLANK_ENVELOPE_THRESHOLD};
use crate::audio::AudioBuffer;
use crate::backend::{BackendClient, BackendRequest, Task};
use crate::error::{Error, Result};
use crate::spectral::{compute_spectrogram, energy_envelope, StftConfig};
use crate::video::{peak_rate, VideoFeatureSeries};

pub mod feature {
    pub const SNR_ESTIMATE_DB: &str = "snr_estimate_db";
    pub const SILENCE_RATIO: &str = "silence_ratio";
    pub const DOMINANT_BAND_HZ: &str = "dominant_band_hz";
    pub const TEMPO_BPM_ESTIMATE: &str = "tempo_bpm_estimate";
    pub const CLIPPING_RATIO: &str = "clipping_ratio";
    pub const RMS: &str = "rms";
    pub const DURATION_S: &str = "duration_s";
    pub const SPECTRAL_FLATNESS: &str = "spectral_flatness";
    pub const ENVELOPE_PEAK_RATE: &str = "envelope_peak_rate";
    pub const ACTIVITY_MEAN: &str = "activity_mean";
    pub const ACTIVITY_STD: &str = "activity_std";
    pub const ACTIVITY_PEAK_RATE: &str = "activity_peak_rate";
    pub const FRAME_RATE_HZ: &str = "frame_rate_hz";
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CaptionSource {
    Builtin,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Caption {
    pub text: String,
    pub features: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub labels: Vec<String>,
    pub source: CaptionSource,
}

impl Caption {
    pub fn feature(&self, name: &str) -> Option<f64> {
        self.features.get(name).copied()
    }
}

/// Levels at which a feature earns a mention in the caption text.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NotableThresholds {
    pub silence_ratio: f64,
    pub snr_db: f64,
    pub clipping_ratio: f64,
}

impl Default for NotableThresholds {
    fn default() -> Self {
        Self {
            silence_ratio: 0.2,
            snr_db: 10.0,
            clipping_ratio: 0.01,
        }
    }
}

/// Percentage of quietest frames treated as noise by the SNR estimate.
pub const SNR_NOISE_PERCENTILE: f64 = 10.0;
/// Half-width, in bins, of the median used to keep steady tones out of the
/// noise estimate.
const SNR_MEDIAN_HALF_WIDTH: usize = 8;
const SNR_CLAMP_DB: (f64, f64) = (-60.0, 100.0);
/// Envelope rate for silence and tempo measurement.
pub const SILENCE_TICK_HZ: f64 = 100.0;
pub const TEMPO_TICK_HZ: f64 = 20.0;
pub const CLIP_LEVEL: f64 = 0.999;
/// Spectral flatness below which a sound is described as tonal.
const TONAL_FLATNESS: f64 = 0.05;
/// Coefficient of variation above which video activity counts as rhythmic.
const RHYTHMIC_CV: f64 = 0.3;

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// Estimated SNR in dB.
///
/// Per-bin noise power is the mean over the quietest 10 % of interior
/// frames, capped by the median of its neighbouring bins so a steady tone
/// present in every frame is not mistaken for noise. Signal power is the
/// mean over all interior frames minus that noise. Silence reads as the
/// upper clamp, 100 dB.
pub fn estimate_snr_db(audio: &AudioBuffer) -> Result<f64> {
    let spec = compute_spectrogram(audio, &StftConfig::default())?;
    let bins = spec.n_bins();
    let power = |t: usize| spec.frames()[t].iter().map(|c| c.norm_sqr());
    let quiet = quiet_frames(&spec, SNR_NOISE_PERCENTILE);
    let mut noise = vec![0.0; bins];
    for &t in &quiet {
        for (n, p) in noise.iter_mut().zip(power(t)) {
            *n += p / quiet.len() as f64;
        }
    }
    let refined: Vec<f64> = (0..bins)
        .map(|k| {
            let lo = k.saturating_sub(SNR_MEDIAN_HALF_WIDTH);
            let hi = (k + SNR_MEDIAN_HALF_WIDTH + 1).min(bins);
            noise[k].min(median(noise[lo..hi].to_vec()))
        })
        .collect();
    let interior: Vec<usize> = spec.interior_frames().collect();
    let total: f64 = interior.iter().flat_map(|&t| power(t)).sum::<f64>() / interior.len() as f64;
    let noise_total: f64 = refined.iter().sum();
    if total == 0.0 || noise_total == 0.0 {
        return Ok(SNR_CLAMP_DB.1);
    }
    let signal = (total - noise_total).max(total * 1e-12);
    Ok((10.0 * (signal / noise_total).log10()).clamp(SNR_CLAMP_DB.0, SNR_CLAMP_DB.1))
}

struct MeanSpectrum {
    magnitude: Vec<f64>,
    power: Vec<f64>,
    bin_hz: Vec<f64>,
}

/// Per-bin mean magnitude and power over all frames.
fn mean_spectrum(audio: &AudioBuffer) -> Result<MeanSpectrum> {
    let spec = compute_spectrogram(audio, &StftConfig::default())?;
    let mut mag = vec![0.0; spec.n_bins()];
    let mut pow = vec![0.0; spec.n_bins()];
    for frame in spec.frames() {
        for (k, c) in frame.iter().enumerate() {
            mag[k] += c.norm();
            pow[k] += c.norm_sqr();
        }
    }
    let n = spec.n_frames() as f64;
    mag.iter_mut().for_each(|v| *v /= n);
    pow.iter_mut().for_each(|v| *v /= n);
    Ok(MeanSpectrum {
        magnitude: mag,
        power: pow,
        bin_hz: (0..spec.n_bins()).map(|k| spec.bin_hz(k)).collect(),
    })
}

/// Magnitude-weighted mean frequency; 0 for silence.
pub fn spectral_centroid_hz(audio: &AudioBuffer) -> Result<f64> {
    let s = mean_spectrum(audio)?;
    let total: f64 = s.magnitude.iter().sum();
    if total == 0.0 {
        return Ok(0.0);
    }
    Ok(s.magnitude.iter().zip(&s.bin_hz).map(|(m, f)| m * f).sum::<f64>() / total)
}

/// Geometric over arithmetic mean of the mean power spectrum; 0 for silence.
pub fn spectral_flatness(audio: &AudioBuffer) -> Result<f64> {
    let pow = mean_spectrum(audio)?.power;
    let mean = pow.iter().sum::<f64>() / pow.len() as f64;
    if mean == 0.0 {
        return Ok(0.0);
    }
    let log_mean = pow.iter().map(|p| (p + 1e-300).ln()).sum::<f64>() / pow.len() as f64;
    Ok(log_mean.exp() / mean)
}

/// The builtin audio feature set.
pub fn audio_features(audio: &AudioBuffer) -> Result<BTreeMap<String, f64>> {
    if audio.is_empty() {
        return Err(Error::EmptyAudio);
    }
    let silence_env = energy_envelope(audio, SILENCE_TICK_HZ)?;
    let silence_ratio = silence_env
        .iter()
        .filter(|&&e| e < BLANK_ENVELOPE_THRESHOLD)
        .count() as f64
        / silence_env.len() as f64;
    let tempo_env = energy_envelope(audio, TEMPO_TICK_HZ)?;
    let env_rate = peak_rate(&tempo_env, TEMPO_TICK_HZ);
    let clipped = audio.samples().iter().filter(|x| x.abs() >= CLIP_LEVEL).count();
    let mut f = BTreeMap::new();
    f.insert(feature::SNR_ESTIMATE_DB.into(), estimate_snr_db(audio)?);
    f.insert(feature::SILENCE_RATIO.into(), silence_ratio);
    f.insert(feature::DOMINANT_BAND_HZ.into(), spectral_centroid_hz(audio)?);
    f.insert(feature::TEMPO_BPM_ESTIMATE.into(), 60.0 * env_rate);
    f.insert(feature::ENVELOPE_PEAK_RATE.into(), env_rate);
    f.insert(feature::CLIPPING_RATIO.into(), clipped as f64 / audio.len() as f64);
    f.insert(feature::RMS.into(), audio.rms());
    f.insert(feature::DURATION_S.into(), audio.duration_s());
    f.insert(feature::SPECTRAL_FLATNESS.into(), spectral_flatness(audio)?);
    Ok(f)
}

pub fn describe_audio(audio: &AudioBuffer) -> Result<Caption> {
    describe_audio_with(audio, &NotableThresholds::default())
}

pub fn describe_audio_with(audio: &AudioBuffer, notable: &NotableThresholds) -> Result<Caption> {
    let f = audio_features(audio)?;
    let get = |k: &str| f[k];
    let silence = get(feature::SILENCE_RATIO);
    let text = if silence >= 0.999 {
        "Blank audio: the clip is silent throughout.".to_string()
    } else {
        let mut s = format!(
            "A {} sound centred near {:.0} Hz",
            if get(feature::SPECTRAL_FLATNESS) < TONAL_FLATNESS {
                "tonal"
            } else {
                "broadband"
            },
            get(feature::DOMINANT_BAND_HZ)
        );
        let tempo = get(feature::TEMPO_BPM_ESTIMATE);
        if tempo > 0.0 {
            s += &format!(", pulsing at about {tempo:.0} events per minute");
        }
        let snr = get(feature::SNR_ESTIMATE_DB);
        if snr < notable.snr_db {
            s += &format!("; background noise interference is strong (estimated SNR {snr:.1} dB)");
        }
        if silence > notable.silence_ratio {
            s += &format!("; {:.0}% of the clip is blank", 100.0 * silence);
        }
        let clip = get(feature::CLIPPING_RATIO);
        if clip > notable.clipping_ratio {
            s += &format!("; {:.1}% of samples are clipped", 100.0 * clip);
        }
        s + "."
    };
    Ok(Caption {
        text,
        features: f,
        labels: Vec::new(),
        source: CaptionSource::Builtin,
    })
}

pub fn video_features(v: &VideoFeatureSeries) -> Result<BTreeMap<String, f64>> {
    v.validate()?;
    let n = v.activity.len() as f64;
    let mean = v.activity.iter().sum::<f64>() / n;
    let std = (v.activity.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n).sqrt();
    let mut f = BTreeMap::new();
    f.insert(feature::ACTIVITY_MEAN.into(), mean);
    f.insert(feature::ACTIVITY_STD.into(), std);
    f.insert(
        feature::ACTIVITY_PEAK_RATE.into(),
        peak_rate(&v.activity, v.frame_rate_hz),
    );
    f.insert(feature::DURATION_S.into(), v.duration_s());
    f.insert(feature::FRAME_RATE_HZ.into(), v.frame_rate_hz);
    Ok(f)
}

pub fn describe_video(v: &VideoFeatureSeries) -> Result<Caption> {
    let f = video_features(v)?;
    let subject = if v.labels.is_empty() {
        "an unlabelled scene".to_string()
    } else {
        v.labels.join(", ")
    };
    let (mean, std, rate) = (
        f[feature::ACTIVITY_MEAN],
        f[feature::ACTIVITY_STD],
        f[feature::ACTIVITY_PEAK_RATE],
    );
    let text = if std < 1e-9 {
        format!("A static scene showing {subject}.")
    } else if rate > 0.0 && std > RHYTHMIC_CV * mean {
        format!("Video of {subject} with rhythmic activity at about {rate:.1} events per second.")
    } else {
        format!("Video of {subject} with steady activity.")
    };
    Ok(Caption {
        text,
        features: f,
        labels: v.labels.clone(),
        source: CaptionSource::Builtin,
    })
}

#[derive(Debug, Clone, Copy)]
pub enum CaptionRequest<'a> {
    Audio(&'a AudioBuffer),
    Video(&'a VideoFeatureSeries),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fallback {
    #[default]
    None,
    Builtin,
}

/// Asks the backend for a caption, falling back to the builtin describer on
/// any backend failure when `fallback` is `Builtin`.
pub fn remote_caption(
    req: CaptionRequest<'_>,
    client: &BackendClient,
    fallback: Fallback,
) -> Result<Caption> {
    match call_remote(req, client) {
        Ok(c) => Ok(c),
        Err(e) if fallback == Fallback::Builtin && is_backend_error(&e) => {
            log::warn!("remote caption failed ({e}); using builtin describer");
            match req {
                CaptionRequest::Audio(a) => describe_audio(a),
                CaptionRequest::Video(v) => describe_video(v),
            }
        }
        Err(e) => Err(e),
    }
}

pub(crate) fn is_backend_error(e: &Error) -> bool {
    matches!(
        e,
        Error::BackendUnreachable { .. } | Error::BackendMalformedResponse(_) | Error::Timeout(_)
    )
}

fn call_remote(req: CaptionRequest<'_>, client: &BackendClient) -> Result<Caption> {
    let (modality, payload, labels) = match req {
        CaptionRequest::Audio(a) => {
            if a.is_empty() {
                return Err(Error::EmptyAudio);
            }
            ("audio", client.audio_payload(a)?, Vec::new())
        }
        CaptionRequest::Video(v) => {
            v.validate()?;
            ("video", client.video_payload(v)?, v.labels.clone())
        }
    };
    let resp = client.call(&BackendRequest {
        task: Task::Caption,
        modality: Some(modality.into()),
        payload,
        context: json!({}),
    })?;
    let text = resp
        .text
        .filter(|t| !t.trim().is_empty())
        .ok_or_else(|| Error::BackendMalformedResponse("caption response lacks `text`".into()))?;
    let features = resp.features.unwrap_or_default();
    if features.values().any(|v| !v.is_finite()) {
        return Err(Error::BackendMalformedResponse(
            "caption features must be finite".into(),
        ));
    }
    Ok(Caption {
        text,
        features,
        labels,
        source: CaptionSource::Remote,
    })
}

/// How the workflow obtains captions.
#[derive(Debug, Clone)]
pub enum Captioner {
    Builtin(NotableThresholds),
    Remote {
        client: BackendClient,
        fallback: Fallback,
    },
}

impl Default for Captioner {
    fn default() -> Self {
        Captioner::Builtin(NotableThresholds::default())
    }
}

impl Captioner {
    pub fn audio(&self, audio: &AudioBuffer) -> Result<Caption> {
        match self {
            Captioner::Builtin(t) => describe_audio_with(audio, t),
            Captioner::Remote { client, fallback } => {
                remote_caption(CaptionRequest::Audio(audio), client, *fallback)
            }
        }
    }

    pub fn video(&self, v: &VideoFeatureSeries) -> Result<Caption> {
        match self {
            Captioner::Builtin(_) => describe_video(v),
            Captioner::Remote { client, fallback } => {
                remote_caption(CaptionRequest::Video(v), client, *fallback)
            }
        }
    }
}
