//! Periodised orthogonal DWT and universal-threshold soft denoising.

use serde::{Deserialize, Serialize};

use super::WaveletParams;
use crate::audio::AudioBuffer;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Wavelet {
    Haar,
    /// Daubechies, four vanishing moments (8 taps).
    Db4,
}

const HAAR: [f64; 2] = [std::f64::consts::FRAC_1_SQRT_2, std::f64::consts::FRAC_1_SQRT_2];

const DB4: [f64; 8] = [
    0.230_377_813_308_855_23,
    0.714_846_570_552_541_5,
    0.630_880_767_929_590_4,
    -0.027_983_769_416_983_85,
    -0.187_034_811_718_881_14,
    0.030_841_381_835_986_965,
    0.032_883_011_666_982_945,
    -0.010_597_401_784_997_278,
];

impl Wavelet {
    /// Scaling (low-pass) filter.
    pub fn lowpass(self) -> &'static [f64] {
        match self {
            Wavelet::Haar => &HAAR,
            Wavelet::Db4 => &DB4,
        }
    }

    /// Wavelet (high-pass) filter, the alternating flip of the low-pass.
    pub fn highpass(self) -> Vec<f64> {
        let h = self.lowpass();
        let l = h.len();
        (0..l)
            .map(|k| if k % 2 == 0 { h[l - 1 - k] } else { -h[l - 1 - k] })
            .collect()
    }
}

/// Multi-level decomposition: `details[0]` is the finest level.
#[derive(Debug, Clone, PartialEq)]
pub struct Decomposition {
    pub approx: Vec<f64>,
    pub details: Vec<Vec<f64>>,
}

fn analysis_step(x: &[f64], h: &[f64], g: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = x.len();
    let half = n / 2;
    let mut a = vec![0.0; half];
    let mut d = vec![0.0; half];
    for i in 0..half {
        let (mut sa, mut sd) = (0.0, 0.0);
        for k in 0..h.len() {
            let v = x[(2 * i + k) % n];
            sa += h[k] * v;
            sd += g[k] * v;
        }
        a[i] = sa;
        d[i] = sd;
    }
    (a, d)
}

fn synthesis_step(a: &[f64], d: &[f64], h: &[f64], g: &[f64]) -> Vec<f64> {
    let n = a.len() * 2;
    let mut x = vec![0.0; n];
    for i in 0..a.len() {
        for k in 0..h.len() {
            x[(2 * i + k) % n] += h[k] * a[i] + g[k] * d[i];
        }
    }
    x
}

/// Forward transform. `x.len()` must be a multiple of `2^levels`.
pub fn dwt(x: &[f64], wavelet: Wavelet, levels: u32) -> Result<Decomposition> {
    let block = 1usize << levels;
    if x.is_empty() || x.len() % block != 0 {
        return Err(Error::InvalidValue(format!(
            "dwt length {} is not a positive multiple of {block}",
            x.len()
        )));
    }
    let h = wavelet.lowpass();
    let g = wavelet.highpass();
    let mut approx = x.to_vec();
    let mut details = Vec::with_capacity(levels as usize);
    for _ in 0..levels {
        let (a, d) = analysis_step(&approx, h, &g);
        details.push(d);
        approx = a;
    }
    Ok(Decomposition { approx, details })
}

/// Inverse of [`dwt`].
pub fn idwt(dec: &Decomposition, wavelet: Wavelet) -> Vec<f64> {
    let h = wavelet.lowpass();
    let g = wavelet.highpass();
    let mut x = dec.approx.clone();
    for d in dec.details.iter().rev() {
        x = synthesis_step(&x, d, h, &g);
    }
    x
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// Noise level from the finest detail band: `median(|d|) / 0.6745`.
pub fn estimate_sigma(finest: &[f64]) -> f64 {
    median(finest.iter().map(|v| v.abs()).collect()) / 0.6745
}

pub fn soft_threshold(v: f64, t: f64) -> f64 {
    v.signum() * (v.abs() - t).max(0.0)
}

/// Universal-threshold soft denoising.
///
/// The signal is zero-padded to a multiple of `2^levels`, decomposed, every
/// detail coefficient is soft-thresholded at `sigma * sqrt(2 ln n)` and the
/// reconstruction is trimmed back to the input length.
pub fn wavelet_denoise(audio: &AudioBuffer, p: &WaveletParams) -> Result<AudioBuffer> {
    p.validate()?;
    let n = audio.len();
    let block = 1usize << p.levels;
    if n < block {
        return Err(Error::TooShort {
            needed: block,
            got: n,
        });
    }
    let mut x = audio.samples().to_vec();
    x.resize(n.div_ceil(block) * block, 0.0);
    let mut dec = dwt(&x, p.wavelet, p.levels)?;
    let sigma = estimate_sigma(&dec.details[0]);
    let t = sigma * (2.0 * (n as f64).ln()).sqrt();
    for d in &mut dec.details {
        d.iter_mut().for_each(|v| *v = soft_threshold(*v, t));
    }
    let mut y = idwt(&dec, p.wavelet);
    y.truncate(n);
    Ok(AudioBuffer::from_samples_clamped(y, audio.sample_rate_hz()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::*;

    #[test]
    fn filters_are_orthonormal() {
        for w in [Wavelet::Haar, Wavelet::Db4] {
            let h = w.lowpass();
            let sum: f64 = h.iter().sum();
            assert!((sum - std::f64::consts::SQRT_2).abs() < 1e-9);
            let norm: f64 = h.iter().map(|v| v * v).sum();
            assert!((norm - 1.0).abs() < 1e-9);
            for shift in (2..h.len()).step_by(2) {
                let dot: f64 = (0..h.len() - shift).map(|k| h[k] * h[k + shift]).sum();
                assert!(dot.abs() < 1e-9);
            }
        }
    }

    #[test]
    fn perfect_reconstruction() {
        for w in [Wavelet::Haar, Wavelet::Db4] {
            for levels in [1, 3, 5, 8] {
                let x = white(1 << 10, 0.8, levels as u64);
                let dec = dwt(&x, w, levels).unwrap();
                let y = idwt(&dec, w);
                assert!(max_abs_diff(&x, &y) < 1e-8, "{w:?} levels {levels}");
            }
        }
    }

    #[test]
    fn constant_signal_passes_haar_unchanged() {
        let x = vec![0.3; 5000];
        let p = WaveletParams {
            wavelet: Wavelet::Haar,
            ..Default::default()
        };
        let out = wavelet_denoise(&buf(x.clone()), &p).unwrap();
        assert_eq!(out.len(), 5000);
        assert!(max_abs_diff(&x, out.samples()) < 1e-9);
    }

    #[test]
    fn white_noise_variance_drops() {
        let x = gaussian(16_000, 0.1, 5);
        let out = wavelet_denoise(&buf(x.clone()), &WaveletParams::default()).unwrap();
        assert!(variance(out.samples()) < variance(&x));
    }

    #[test]
    fn too_short() {
        let p = WaveletParams::default();
        assert!(matches!(
            wavelet_denoise(&buf(vec![0.0; 31]), &p),
            Err(Error::TooShort { needed: 32, got: 31 })
        ));
    }

    #[test]
    fn improves_snr_at_zero_db() {
        let f = tone_in_noise(440.0, 0.0, 3);
        let out = wavelet_denoise(&f.noisy, &WaveletParams::default()).unwrap();
        assert!(snr_db(&f.clean, out.samples()) > snr_db(&f.clean, f.noisy.samples()));
    }
}
