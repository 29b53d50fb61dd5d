//! Phase-vocoder time stretching on the shared 50/25 ms STFT grid, and
//! pitch shifting as stretch-then-resample.

use std::f64::consts::PI;

use rustfft::num_complex::Complex64;

use super::{PitchParams, SpeedParams};
use crate::audio::{resample_to_len, AudioBuffer};
use crate::error::{Error, Result};
use crate::spectral::{compute_spectrogram, invert_raw, Spectrogram, StftConfig};

fn wrap_phase(p: f64) -> f64 {
    p - 2.0 * PI * ((p + PI) / (2.0 * PI)).floor()
}

/// Plays `audio` at `rate` times its speed without changing pitch.
///
/// Output length is `round(len / rate)`. Magnitudes are linearly
/// interpolated between analysis frames; phases advance by each bin's
/// measured instantaneous frequency. No phase locking.
pub fn time_stretch(audio: &AudioBuffer, rate: f64) -> Result<Vec<f64>> {
    let cfg = StftConfig::default();
    let sr = audio.sample_rate_hz();
    let needed = cfg.window_len(sr);
    if audio.len() < needed {
        return Err(Error::TooShort {
            needed,
            got: audio.len(),
        });
    }
    let spec = compute_spectrogram(audio, &cfg)?;
    let hop = cfg.hop_len(sr) as f64;
    let n_fft = cfg.fft_len(sr) as f64;
    let bins = spec.n_bins();
    let src = spec.frames();
    let last = src.len() - 1;

    let out_len = ((audio.len() as f64) / rate).round() as usize;
    let out_frames = cfg.frame_count(out_len, sr);
    let expected: Vec<f64> = (0..bins).map(|k| 2.0 * PI * k as f64 * hop / n_fft).collect();
    let mut phase: Vec<f64> = src[0].iter().map(|c| c.arg()).collect();
    let mut frames = Vec::with_capacity(out_frames);
    for i in 0..out_frames {
        let pos = (i as f64 * rate).min(last as f64);
        let a = pos.floor() as usize;
        let b = (a + 1).min(last);
        let frac = pos - a as f64;
        let frame: Vec<Complex64> = (0..bins)
            .map(|k| {
                let mag = (1.0 - frac) * src[a][k].norm() + frac * src[b][k].norm();
                Complex64::from_polar(mag, phase[k])
            })
            .collect();
        frames.push(frame);
        for k in 0..bins {
            let dphi = src[b][k].arg() - src[a][k].arg() - expected[k];
            phase[k] += expected[k] + wrap_phase(dphi);
        }
    }
    let stretched = Spectrogram::from_frames(frames, cfg, out_len, sr)?;
    invert_raw(&stretched)
}

/// Changes playback speed by `speed_factor`, preserving pitch.
pub fn speed_mod(audio: &AudioBuffer, p: &SpeedParams) -> Result<AudioBuffer> {
    p.validate()?;
    if p.speed_factor == 1.0 {
        return Ok(audio.clone());
    }
    let y = time_stretch(audio, p.speed_factor)?;
    Ok(AudioBuffer::from_samples_clamped(y, audio.sample_rate_hz()))
}

/// Shifts pitch by `pitch_semitones`, preserving duration.
pub fn pitch_mod(audio: &AudioBuffer, p: &PitchParams) -> Result<AudioBuffer> {
    p.validate()?;
    if p.pitch_semitones == 0.0 {
        return Ok(audio.clone());
    }
    let ratio = 2f64.powf(p.pitch_semitones / 12.0);
    // Lengthen by `ratio`, then squeeze back: every frequency scales by `ratio`.
    let stretched = time_stretch(audio, 1.0 / ratio)?;
    let y = resample_to_len(&stretched, audio.len());
    Ok(AudioBuffer::from_samples_clamped(y, audio.sample_rate_hz()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::*;

    #[test]
    fn unit_speed_is_identity() {
        let x = white(8000, 0.4, 2);
        let out = speed_mod(&buf(x.clone()), &SpeedParams { speed_factor: 1.0 }).unwrap();
        assert_eq!(out.samples(), &x[..]);
    }

    #[test]
    fn double_speed_halves_duration() {
        let a = buf(sine(440.0, 32_000, 0.5));
        let out = speed_mod(&a, &SpeedParams { speed_factor: 2.0 }).unwrap();
        assert!((out.duration_s() - 2.0).abs() <= 0.025);
    }

    #[test]
    fn half_speed_doubles_duration_keeps_pitch() {
        let a = buf(sine(440.0, 16_000, 0.5));
        let out = speed_mod(&a, &SpeedParams { speed_factor: 0.5 }).unwrap();
        assert!((out.len() as f64 - 32_000.0).abs() <= 200.0);
        let peak = fft_peak_hz(out.samples(), 8000);
        assert!((peak - 440.0).abs() <= peak_bin_hz(8000), "peak at {peak}");
    }

    #[test]
    fn octave_up_and_down() {
        let up = pitch_mod(&buf(sine(440.0, 16_000, 0.5)), &PitchParams { pitch_semitones: 12.0 }).unwrap();
        assert_eq!(up.len(), 16_000);
        assert!((fft_peak_hz(up.samples(), 8000) - 880.0).abs() <= peak_bin_hz(8000));
        let down = pitch_mod(&buf(sine(880.0, 16_000, 0.5)), &PitchParams { pitch_semitones: -12.0 }).unwrap();
        assert_eq!(down.len(), 16_000);
        assert!((fft_peak_hz(down.samples(), 8000) - 440.0).abs() <= peak_bin_hz(8000));
    }

    #[test]
    fn zero_semitones_is_identity() {
        let x = white(4000, 0.3, 8);
        let out = pitch_mod(&buf(x.clone()), &PitchParams { pitch_semitones: 0.0 }).unwrap();
        assert_eq!(out.samples(), &x[..]);
    }

    #[test]
    fn out_of_range_is_rejected() {
        let a = buf(vec![0.0; 4000]);
        assert!(matches!(
            speed_mod(&a, &SpeedParams { speed_factor: 3.0 }),
            Err(Error::ParamOutOfRange { .. })
        ));
        assert!(matches!(
            pitch_mod(&a, &PitchParams { pitch_semitones: 13.0 }),
            Err(Error::ParamOutOfRange { .. })
        ));
    }
}
