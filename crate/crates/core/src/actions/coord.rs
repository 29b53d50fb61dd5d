//! Volume adjustment and blank filling.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rustfft::num_complex::Complex64;

use super::{FillMode, FillParams, VolumeParams};
use crate::audio::{rms, AudioBuffer};
use crate::error::{Error, Result};
use crate::spectral::{invert_raw, FftPair, Spectrogram, StftConfig};

/// Envelope RMS below which a stretch of audio counts as blank.
pub const BLANK_ENVELOPE_THRESHOLD: f64 = 1e-4;

/// Envelope tick used for blank detection.
const BLANK_TICK_MS: f64 = 5.0;
const FLANK_MS: f64 = 250.0;
const CROSSFADE_MS: f64 = 10.0;
/// Comfort noise level, dBFS RMS.
const COMFORT_NOISE_DBFS: f64 = -60.0;
const SOFT_CLIP_KNEE: f64 = 0.9;

fn soft_clip(x: f64) -> f64 {
    let a = x.abs();
    if a <= SOFT_CLIP_KNEE {
        return x;
    }
    let span = 1.0 - SOFT_CLIP_KNEE;
    x.signum() * (SOFT_CLIP_KNEE + span * ((a - SOFT_CLIP_KNEE) / span).tanh())
}

/// Static gain or RMS targeting.
///
/// If the scaled signal would exceed full scale anywhere, samples above
/// 0.9 are bent through a tanh knee so the peak stays below 1; otherwise
/// the scaled signal is returned untouched.
pub fn volume_adjust(audio: &AudioBuffer, p: &VolumeParams) -> Result<AudioBuffer> {
    p.validate()?;
    let gain = match (p.gain_db, p.target_rms) {
        (Some(db), _) => 10f64.powf(db / 20.0),
        (None, Some(target)) => {
            let current = audio.rms();
            if current == 0.0 {
                return Err(Error::SilentInput);
            }
            target / current
        }
        (None, None) => unreachable!("validated"),
    };
    let mut y: Vec<f64> = audio.samples().iter().map(|x| x * gain).collect();
    if y.iter().any(|v| v.abs() > 1.0) {
        y.iter_mut().for_each(|v| *v = soft_clip(*v));
    }
    Ok(AudioBuffer::from_samples_clamped(y, audio.sample_rate_hz()))
}

/// Sample ranges of blank runs at least `min_ms` long.
pub(crate) fn find_blanks(audio: &AudioBuffer, min_ms: f64) -> Vec<(usize, usize)> {
    let sr = audio.sample_rate_hz() as f64;
    let tick = ((BLANK_TICK_MS * sr / 1000.0).round() as usize).max(1);
    let min_len = (min_ms * sr / 1000.0).ceil() as usize;
    let x = audio.samples();
    let mut blanks = Vec::new();
    let mut run_start: Option<usize> = None;
    for lo in (0..x.len()).step_by(tick) {
        let hi = (lo + tick).min(x.len());
        let quiet = rms(&x[lo..hi]) < BLANK_ENVELOPE_THRESHOLD;
        match (quiet, run_start) {
            (true, None) => run_start = Some(lo),
            (false, Some(s)) => {
                if lo - s >= min_len {
                    blanks.push((s, lo));
                }
                run_start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = run_start {
        if x.len() - s >= min_len {
            blanks.push((s, x.len()));
        }
    }
    blanks
}

fn average_magnitude(regions: &[&[f64]], cfg: &StftConfig, sr: u32) -> Option<Vec<f64>> {
    let win = cfg.window_len(sr);
    let hop = cfg.hop_len(sr);
    let window = cfg.window(sr);
    let fft = FftPair::new(cfg.fft_len(sr));
    let mut acc = vec![0.0; fft.len / 2 + 1];
    let mut count = 0usize;
    let mut frame = vec![0.0; win];
    for region in regions {
        let mut start = 0;
        while start + win <= region.len() {
            for (j, f) in frame.iter_mut().enumerate() {
                *f = region[start + j] * window[j];
            }
            for (a, c) in acc.iter_mut().zip(fft.real_forward(&frame)) {
                *a += c.norm();
            }
            count += 1;
            start += hop;
        }
    }
    (count > 0).then(|| acc.into_iter().map(|a| a / count as f64).collect())
}

fn shaped_noise(mag: &[f64], len: usize, sr: u32, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
    let cfg = StftConfig::default();
    let frames = (0..cfg.frame_count(len, sr))
        .map(|_| {
            let last = mag.len() - 1;
            mag.iter()
                .enumerate()
                .map(|(k, &m)| {
                    if k == 0 || k == last {
                        Complex64::new(if rng.random::<bool>() { m } else { -m }, 0.0)
                    } else {
                        Complex64::from_polar(m, rng.random_range(0.0..2.0 * PI))
                    }
                })
                .collect()
        })
        .collect();
    invert_raw(&Spectrogram::from_frames(frames, cfg, len, sr)?)
}

fn comfort_noise(len: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let sigma = 10f64.powf(COMFORT_NOISE_DBFS / 20.0);
    let normal = Normal::new(0.0, sigma).expect("positive sigma");
    (0..len).map(|_| normal.sample(rng)).collect()
}

/// Fills blank runs with synthetic noise.
///
/// `context_noise` shapes random-phase noise to the mean magnitude spectrum
/// of up to 250 ms either side of each gap and matches the flanks' RMS,
/// falling back to comfort noise when the flanks are themselves silent.
/// `comfort_noise` uses -60 dBFS white noise. Fills are cross-faded over
/// 10 ms at both edges.
pub fn fill_blanks(audio: &AudioBuffer, p: &FillParams, seed: u64) -> Result<AudioBuffer> {
    p.validate()?;
    let blanks = find_blanks(audio, p.blank_min_ms);
    if blanks.is_empty() {
        return Ok(audio.clone());
    }
    let sr = audio.sample_rate_hz();
    let x = audio.samples();
    let flank = (FLANK_MS * sr as f64 / 1000.0).round() as usize;
    let fade = ((CROSSFADE_MS * sr as f64 / 1000.0).round() as usize).max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut y = x.to_vec();
    for &(lo, hi) in &blanks {
        let len = hi - lo;
        let left = &x[lo.saturating_sub(flank)..lo];
        let right = &x[hi..(hi + flank).min(x.len())];
        let flank_rms = {
            let joined: Vec<f64> = left.iter().chain(right).copied().collect();
            rms(&joined)
        };
        let fill = match p.fill_mode {
            FillMode::ContextNoise if flank_rms >= BLANK_ENVELOPE_THRESHOLD => {
                match average_magnitude(&[left, right], &StftConfig::default(), sr) {
                    Some(mag) => {
                        let mut noise = shaped_noise(&mag, len, sr, &mut rng)?;
                        let level = rms(&noise);
                        if level > 0.0 {
                            noise.iter_mut().for_each(|v| *v *= flank_rms / level);
                        }
                        noise
                    }
                    None => comfort_noise(len, &mut rng),
                }
            }
            _ => comfort_noise(len, &mut rng),
        };
        let ramp = fade.min(len / 2).max(1);
        for (j, v) in fill.into_iter().enumerate() {
            let r = if j < ramp {
                j as f64 / ramp as f64
            } else if len - 1 - j < ramp {
                (len - 1 - j) as f64 / ramp as f64
            } else {
                1.0
            };
            // Blanks at the very start or end have nothing to fade from.
            let r = match (lo == 0 && j < ramp, hi == x.len() && len - 1 - j < ramp) {
                (true, _) | (_, true) => 1.0,
                _ => r,
            };
            y[lo + j] = (1.0 - r) * x[lo + j] + r * v;
        }
    }
    Ok(AudioBuffer::from_samples_clamped(y, sr))
}
