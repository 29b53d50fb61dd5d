//! Fixtures and oracles shared by unit tests. Oracles use direct sums, not
//! the crate's FFT path.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::audio::AudioBuffer;

pub fn buf(samples: Vec<f64>) -> AudioBuffer {
    AudioBuffer::new(samples, 8000).unwrap()
}

pub fn sine(freq: f64, n: usize, amp: f64) -> Vec<f64> {
    (0..n)
        .map(|i| amp * (2.0 * PI * freq * i as f64 / 8000.0).sin())
        .collect()
}

pub fn white(n: usize, amp: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.random_range(-amp..amp)).collect()
}

pub fn gaussian(n: usize, sigma: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = Normal::new(0.0, sigma).unwrap();
    (0..n).map(|_| d.sample(&mut rng).clamp(-1.0, 1.0)).collect()
}

pub fn energy(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

pub fn variance(x: &[f64]) -> f64 {
    let m = x.iter().sum::<f64>() / x.len() as f64;
    x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / x.len() as f64
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Sample-wise SNR of `out` against the clean reference, in dB.
pub fn snr_db(clean: &[f64], out: &[f64]) -> f64 {
    let err: f64 = clean.iter().zip(out).map(|(c, o)| (c - o).powi(2)).sum();
    10.0 * (energy(clean) / err).log10()
}

const PEAK_DFT_LEN: usize = 4096;

pub fn peak_bin_hz(sr: u32) -> f64 {
    sr as f64 / PEAK_DFT_LEN as f64
}

fn dft_mags(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    (0..=n / 2)
        .map(|k| {
            let (mut re, mut im) = (0.0, 0.0);
            for (j, &v) in x.iter().enumerate() {
                let ang = -2.0 * PI * ((k * j) % n) as f64 / n as f64;
                re += v * ang.cos();
                im += v * ang.sin();
            }
            (re * re + im * im).sqrt()
        })
        .collect()
}

/// Peak frequency of a Hann-windowed 4096-sample excerpt from the middle.
pub fn fft_peak_hz(x: &[f64], sr: u32) -> f64 {
    assert!(x.len() >= PEAK_DFT_LEN);
    let start = (x.len() - PEAK_DFT_LEN) / 2;
    let seg: Vec<f64> = (0..PEAK_DFT_LEN)
        .map(|j| x[start + j] * 0.5 * (1.0 - (2.0 * PI * j as f64 / PEAK_DFT_LEN as f64).cos()))
        .collect();
    let mags = dft_mags(&seg);
    let k = (1..mags.len())
        .max_by(|&a, &b| mags[a].total_cmp(&mags[b]))
        .unwrap();
    k as f64 * peak_bin_hz(sr)
}

/// Magnitude-weighted mean frequency of a segment.
pub fn spectral_centroid_hz(x: &[f64], sr: u32) -> f64 {
    let n = x.len();
    let seg: Vec<f64> = (0..n)
        .map(|j| x[j] * 0.5 * (1.0 - (2.0 * PI * j as f64 / n as f64).cos()))
        .collect();
    let mags = dft_mags(&seg);
    let num: f64 = mags.iter().enumerate().map(|(k, m)| k as f64 * sr as f64 / n as f64 * m).sum();
    num / mags.iter().sum::<f64>()
}

/// Tone present in the middle two thirds, silent elsewhere.
pub fn gated_tone(freq: f64, n: usize, amp: f64) -> Vec<f64> {
    let mut x = sine(freq, n, amp);
    for (i, v) in x.iter_mut().enumerate() {
        if i < n / 6 || i >= 5 * n / 6 {
            *v = 0.0;
        }
    }
    x
}

pub struct NoisyFixture {
    pub clean: Vec<f64>,
    pub noisy: AudioBuffer,
}

/// Three seconds of gated tone plus white noise at `snr_db` (whole-signal energy ratio).
pub fn tone_in_noise(freq: f64, snr_db: f64, seed: u64) -> NoisyFixture {
    let clean = gated_tone(freq, 24_000, 0.3);
    let noise = gaussian(24_000, 1.0, seed);
    let scale = (energy(&clean) / energy(&noise) / 10f64.powf(snr_db / 10.0)).sqrt();
    let noisy: Vec<f64> = clean
        .iter()
        .zip(&noise)
        .map(|(c, n)| (c + scale * n).clamp(-1.0, 1.0))
        .collect();
    NoisyFixture {
        clean,
        noisy: buf(noisy),
    }
}

pub struct BurstFixture {
    pub noisy: AudioBuffer,
    pub bursts: Vec<(usize, usize)>,
    pub gaps: Vec<(usize, usize)>,
}

/// Half-second 440 Hz bursts alternating with half-second gaps, over light noise.
/// Reported ranges are trimmed 100 ms from each transition.
pub fn tone_bursts_in_noise(seed: u64) -> BurstFixture {
    let n = 32_000;
    let seg = 4000;
    let tone = sine(440.0, n, 0.5);
    let noise = gaussian(n, 0.02, seed);
    let mut x = vec![0.0; n];
    let mut bursts = Vec::new();
    let mut gaps = Vec::new();
    for s in 0..n / seg {
        let (lo, hi) = (s * seg, (s + 1) * seg);
        let on = s % 2 == 1;
        for i in lo..hi {
            x[i] = noise[i] + if on { tone[i] } else { 0.0 };
        }
        let trimmed = (lo + 800, hi - 800);
        if on {
            bursts.push(trimmed);
        } else {
            gaps.push(trimmed);
        }
    }
    BurstFixture {
        noisy: buf(x),
        bursts,
        gaps,
    }
}
