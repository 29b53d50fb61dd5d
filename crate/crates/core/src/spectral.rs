//! Shared spectral front end: STFT analysis, overlap-add resynthesis, the
//! 128x128 log-magnitude view and the RMS energy envelope.
//!
//! Frames are centred: frame `t` is centred on sample `t * hop`, with half a
//! window of zeros padded in front of the signal. Every input sample is then
//! covered by at least two Hann-weighted frames, which keeps the overlap-add
//! window sum well away from zero at the edges.

use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::audio::AudioBuffer;
use crate::error::{Error, Result};

/// Overlap-add positions whose window sum is below this are degenerate.
pub const MIN_WINDOW_SUM: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowFn {
    Hann,
    Rect,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StftConfig {
    pub window_ms: f64,
    pub hop_ms: f64,
    pub window_fn: WindowFn,
    /// Frequency bins of the log-magnitude view.
    pub n_freq_bins: usize,
    /// Time frames of the log-magnitude view.
    pub n_time_frames: usize,
}

impl Default for StftConfig {
    fn default() -> Self {
        Self {
            window_ms: 50.0,
            hop_ms: 25.0,
            window_fn: WindowFn::Hann,
            n_freq_bins: 128,
            n_time_frames: 128,
        }
    }
}

impl StftConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.hop_ms > 0.0 && self.hop_ms <= self.window_ms) {
            return Err(Error::Config(format!(
                "need 0 < hop_ms <= window_ms, got hop {} window {}",
                self.hop_ms, self.window_ms
            )));
        }
        if self.n_freq_bins < 2 || self.n_time_frames < 1 {
            return Err(Error::Config(
                "need n_freq_bins >= 2 and n_time_frames >= 1".into(),
            ));
        }
        Ok(())
    }

    /// Window length in samples.
    pub fn window_len(&self, sample_rate_hz: u32) -> usize {
        ((self.window_ms * sample_rate_hz as f64 / 1000.0).round() as usize).max(2)
    }

    /// Hop length in samples.
    pub fn hop_len(&self, sample_rate_hz: u32) -> usize {
        ((self.hop_ms * sample_rate_hz as f64 / 1000.0).round() as usize).max(1)
    }

    /// FFT size: next power of two at or above the window length.
    pub fn fft_len(&self, sample_rate_hz: u32) -> usize {
        self.window_len(sample_rate_hz).next_power_of_two()
    }

    pub fn window(&self, sample_rate_hz: u32) -> Vec<f64> {
        let n = self.window_len(sample_rate_hz);
        match self.window_fn {
            // Periodic Hann: overlap-adds to a constant at 50 % overlap.
            WindowFn::Hann => (0..n)
                .map(|i| 0.5 * (1.0 - (2.0 * PI * i as f64 / n as f64).cos()))
                .collect(),
            WindowFn::Rect => vec![1.0; n],
        }
    }

    /// Number of centred frames used for a signal of `len` samples.
    pub fn frame_count(&self, len: usize, sample_rate_hz: u32) -> usize {
        len.div_ceil(self.hop_len(sample_rate_hz)) + 1
    }
}

/// Forward and inverse FFT plans for one transform size.
#[derive(Clone)]
pub(crate) struct FftPair {
    pub forward: Arc<dyn Fft<f64>>,
    pub inverse: Arc<dyn Fft<f64>>,
    pub len: usize,
}

impl FftPair {
    pub fn new(len: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            forward: planner.plan_fft_forward(len),
            inverse: planner.plan_fft_inverse(len),
            len,
        }
    }

    /// One-sided spectrum (`len / 2 + 1` bins) of a real frame, zero-padded.
    pub fn real_forward(&self, frame: &[f64]) -> Vec<Complex64> {
        let mut buf: Vec<Complex64> = frame.iter().map(|&x| Complex64::new(x, 0.0)).collect();
        buf.resize(self.len, Complex64::new(0.0, 0.0));
        self.forward.process(&mut buf);
        buf.truncate(self.len / 2 + 1);
        buf
    }

    /// Real frame of `len` samples from a one-sided spectrum, normalised.
    pub fn real_inverse(&self, half: &[Complex64]) -> Vec<f64> {
        let n = self.len;
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        buf[..half.len()].copy_from_slice(half);
        // Hermitian completion; DC and Nyquist must be real.
        buf[0].im = 0.0;
        buf[n / 2].im = 0.0;
        for k in 1..n / 2 {
            buf[n - k] = half[k].conj();
        }
        self.inverse.process(&mut buf);
        buf.iter().map(|c| c.re / n as f64).collect()
    }
}

/// Complex STFT of a mono signal.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    /// `frames[t][k]`: time frame `t`, frequency bin `k` (`fft_len / 2 + 1` bins).
    frames: Vec<Vec<Complex64>>,
    config: StftConfig,
    origin_len: usize,
    sample_rate_hz: u32,
}

impl Spectrogram {
    /// Assembles a spectrogram from frames, e.g. after spectral editing.
    pub fn from_frames(
        frames: Vec<Vec<Complex64>>,
        config: StftConfig,
        origin_len: usize,
        sample_rate_hz: u32,
    ) -> Result<Self> {
        config.validate()?;
        let bins = config.fft_len(sample_rate_hz) / 2 + 1;
        if frames.is_empty() || frames.iter().any(|f| f.len() != bins) {
            return Err(Error::InvalidValue(format!(
                "every frame must have {bins} bins"
            )));
        }
        Ok(Self {
            frames,
            config,
            origin_len,
            sample_rate_hz,
        })
    }

    pub fn frames(&self) -> &[Vec<Complex64>] {
        &self.frames
    }

    pub fn frames_mut(&mut self) -> &mut [Vec<Complex64>] {
        &mut self.frames
    }

    pub fn config(&self) -> &StftConfig {
        &self.config
    }

    pub fn origin_len(&self) -> usize {
        self.origin_len
    }

    pub fn sample_rate_hz(&self) -> u32 {
        self.sample_rate_hz
    }

    pub fn n_frames(&self) -> usize {
        self.frames.len()
    }

    pub fn n_bins(&self) -> usize {
        self.frames[0].len()
    }

    /// Centre frequency of bin `k` in Hz.
    pub fn bin_hz(&self, k: usize) -> f64 {
        k as f64 * self.sample_rate_hz as f64 / self.config.fft_len(self.sample_rate_hz) as f64
    }

    /// Magnitudes, `[t][k]`.
    pub fn magnitudes(&self) -> Vec<Vec<f64>> {
        self.frames
            .iter()
            .map(|f| f.iter().map(|c| c.norm()).collect())
            .collect()
    }

    /// Frames whose window lies entirely inside the source signal.
    pub fn interior_frames(&self) -> std::ops::Range<usize> {
        let hop = self.config.hop_len(self.sample_rate_hz);
        let half = self.config.window_len(self.sample_rate_hz) / 2;
        let first = half.div_ceil(hop);
        let last = (self.origin_len.saturating_sub(half)) / hop;
        if first <= last && last < self.frames.len() {
            first..last + 1
        } else {
            0..self.frames.len()
        }
    }

    /// The fixed-size `n_time_frames x n_freq_bins` log-magnitude view.
    pub fn log_view(&self) -> LogView {
        let bins = self.config.n_freq_bins;
        let frames = self.config.n_time_frames;
        let src_bins = self.n_bins();
        let mut data = vec![vec![0.0; bins]; frames];
        let real = self.frames.len().min(frames);
        for (t, row) in data.iter_mut().enumerate().take(real) {
            let mut counts = vec![0usize; bins];
            for (k, c) in self.frames[t].iter().enumerate() {
                let b = k * bins / src_bins;
                row[b] += c.norm().ln_1p();
                counts[b] += 1;
            }
            for (v, &c) in row.iter_mut().zip(&counts) {
                if c > 0 {
                    *v /= c as f64;
                }
            }
        }
        LogView {
            data,
            real_frames: real,
        }
    }
}

/// Log-magnitude view `log(1 + |X|)`, linearly rebinned and padded or
/// truncated in time.
#[derive(Debug, Clone, PartialEq)]
pub struct LogView {
    /// `[t][b]`.
    pub data: Vec<Vec<f64>>,
    /// Leading rows that came from real frames; the rest are zero padding.
    pub real_frames: usize,
}

impl LogView {
    pub fn n_time_frames(&self) -> usize {
        self.data.len()
    }

    pub fn n_freq_bins(&self) -> usize {
        self.data.first().map_or(0, Vec::len)
    }

    /// Mean over the real (non-padding) frames, one value per bin.
    pub fn time_averaged_profile(&self) -> Vec<f64> {
        let bins = self.n_freq_bins();
        let mut out = vec![0.0; bins];
        if self.real_frames == 0 {
            return out;
        }
        for row in &self.data[..self.real_frames] {
            for (o, v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
        out.iter_mut().for_each(|v| *v /= self.real_frames as f64);
        out
    }
}

/// Forward STFT with centred Hann (or rectangular) frames.
pub fn compute_spectrogram(audio: &AudioBuffer, cfg: &StftConfig) -> Result<Spectrogram> {
    cfg.validate()?;
    let sr = audio.sample_rate_hz();
    let win_len = cfg.window_len(sr);
    if audio.len() < win_len {
        return Err(Error::EmptyAudio);
    }
    let hop = cfg.hop_len(sr);
    let window = cfg.window(sr);
    let fft = FftPair::new(cfg.fft_len(sr));
    let n_frames = cfg.frame_count(audio.len(), sr);
    let pad = win_len / 2;
    let mut padded = vec![0.0; (n_frames - 1) * hop + win_len];
    padded[pad..pad + audio.len()].copy_from_slice(audio.samples());

    let mut frame = vec![0.0; win_len];
    let frames = (0..n_frames)
        .map(|t| {
            let start = t * hop;
            for (j, f) in frame.iter_mut().enumerate() {
                *f = padded[start + j] * window[j];
            }
            fft.real_forward(&frame)
        })
        .collect();
    Ok(Spectrogram {
        frames,
        config: *cfg,
        origin_len: audio.len(),
        sample_rate_hz: sr,
    })
}

/// Weighted overlap-add inverse of [`compute_spectrogram`].
///
/// Each frame is windowed again on synthesis and the sum is divided by the
/// accumulated squared window, so an unmodified spectrogram reconstructs
/// its source. Output length is `spec.origin_len()`.
pub fn invert_spectrogram(spec: &Spectrogram) -> Result<AudioBuffer> {
    let samples = invert_raw(spec)?;
    Ok(AudioBuffer::from_samples_clamped(samples, spec.sample_rate_hz))
}

/// [`invert_spectrogram`] without the final limiting to `[-1, 1]`.
pub(crate) fn invert_raw(spec: &Spectrogram) -> Result<Vec<f64>> {
    let sr = spec.sample_rate_hz;
    let cfg = &spec.config;
    let win_len = cfg.window_len(sr);
    let hop = cfg.hop_len(sr);
    let window = cfg.window(sr);
    let fft = FftPair::new(cfg.fft_len(sr));
    let pad = win_len / 2;
    let total = (spec.frames.len() - 1) * hop + win_len;
    let mut acc = vec![0.0; total];
    let mut wsum = vec![0.0; total];
    for (t, frame) in spec.frames.iter().enumerate() {
        let time = fft.real_inverse(frame);
        let start = t * hop;
        for j in 0..win_len {
            acc[start + j] += time[j] * window[j];
            wsum[start + j] += window[j] * window[j];
        }
    }
    let mut out = vec![0.0; spec.origin_len];
    for (i, o) in out.iter_mut().enumerate() {
        let p = i + pad;
        let w = wsum.get(p).copied().unwrap_or(0.0);
        if w < MIN_WINDOW_SUM {
            return Err(Error::DegenerateWindow { index: i });
        }
        *o = acc[p] / w;
    }
    Ok(out)
}

/// Per-tick RMS energy at `frame_hz` ticks.
///
/// Tick `i` covers samples `[floor(i * sr / frame_hz), floor((i + 1) * sr / frame_hz))`;
/// the last tick may be partial. Length is `ceil(duration * frame_hz)`.
pub fn energy_envelope(audio: &AudioBuffer, frame_hz: f64) -> Result<Vec<f64>> {
    if audio.is_empty() {
        return Err(Error::EmptyAudio);
    }
    let sr = audio.sample_rate_hz() as f64;
    if !(frame_hz > 0.0 && frame_hz <= sr) {
        return Err(Error::range("frame_hz", frame_hz, "(0, sample_rate_hz]"));
    }
    let per_tick = sr / frame_hz;
    let n = audio.len();
    let ticks = ((n as f64 / per_tick) - 1e-9).ceil().max(1.0) as usize;
    let x = audio.samples();
    Ok((0..ticks)
        .map(|i| {
            let lo = ((i as f64 * per_tick).floor() as usize).min(n);
            let hi = (((i + 1) as f64 * per_tick).floor() as usize).min(n);
            crate::audio::rms(&x[lo..hi.max(lo)])
        })
        .collect())
}
