//! STFT-domain noise filters: spectral subtraction, Wiener gain, spectral gate.

use rustfft::num_complex::Complex64;

use super::NoiseParams;
use crate::audio::AudioBuffer;
use crate::error::{Error, Result};
use crate::spectral::{compute_spectrogram, invert_spectrogram, Spectrogram, StftConfig};

fn analyse(audio: &AudioBuffer) -> Result<Spectrogram> {
    let cfg = StftConfig::default();
    let needed = cfg.window_len(audio.sample_rate_hz());
    if audio.is_empty() {
        return Err(Error::EmptyAudio);
    }
    if audio.len() < needed {
        return Err(Error::TooShort {
            needed,
            got: audio.len(),
        });
    }
    compute_spectrogram(audio, &cfg)
}

/// Interior frames ranked by energy, lowest first, cut to the `percentile` %
/// quietest. Only frames lying fully inside the signal are candidates, so
/// the half-empty edge frames do not masquerade as quiet ones.
pub(crate) fn quiet_frames(spec: &Spectrogram, percentile: f64) -> Vec<usize> {
    let mut by_energy: Vec<(f64, usize)> = spec
        .interior_frames()
        .map(|t| (spec.frames()[t].iter().map(|c| c.norm_sqr()).sum(), t))
        .collect();
    by_energy.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let take = ((by_energy.len() as f64 * percentile / 100.0).ceil() as usize)
        .clamp(1, by_energy.len().max(1));
    by_energy.into_iter().take(take).map(|(_, t)| t).collect()
}

/// Per-bin noise magnitude: the mean over the `percentile` % lowest-energy
/// interior frames.
pub fn estimate_noise(spec: &Spectrogram, percentile: f64) -> Vec<f64> {
    let frames = quiet_frames(spec, percentile);
    let mut noise = vec![0.0; spec.n_bins()];
    for &t in &frames {
        for (n, c) in noise.iter_mut().zip(&spec.frames()[t]) {
            *n += c.norm();
        }
    }
    if !frames.is_empty() {
        noise.iter_mut().for_each(|n| *n /= frames.len() as f64);
    }
    noise
}

/// Scales every bin by `gain(t, k, |X|)`, keeping its phase.
fn apply_gain(spec: &mut Spectrogram, mut gain: impl FnMut(usize, usize, f64) -> f64) {
    for (t, frame) in spec.frames_mut().iter_mut().enumerate() {
        for (k, c) in frame.iter_mut().enumerate() {
            let g = gain(t, k, c.norm());
            *c = Complex64::new(c.re * g, c.im * g);
        }
    }
}

fn db_to_amp(db: f64) -> f64 {
    10f64.powf(db / 20.0)
}

/// Magnitude subtraction: `max(|X| - a * N, |X| * floor)`, phase kept.
pub fn spectral_subtraction(audio: &AudioBuffer, p: &NoiseParams) -> Result<AudioBuffer> {
    p.validate()?;
    let mut spec = analyse(audio)?;
    let noise = estimate_noise(&spec, p.noise_percentile);
    let floor = db_to_amp(p.floor_db);
    apply_gain(&mut spec, |_, k, mag| {
        if mag <= 0.0 {
            return 0.0;
        }
        (mag - p.oversubtraction * noise[k]).max(mag * floor) / mag
    });
    invert_spectrogram(&spec)
}

/// Wiener gain `max(xi / (1 + xi), floor)` with `xi = max(|X|^2 / N^2 - 1, 0)`.
pub fn wiener_filter(audio: &AudioBuffer, p: &NoiseParams) -> Result<AudioBuffer> {
    p.validate()?;
    let mut spec = analyse(audio)?;
    let noise = estimate_noise(&spec, p.noise_percentile);
    let floor = db_to_amp(p.floor_db);
    apply_gain(&mut spec, |_, k, mag| {
        let n = noise[k];
        let g = if n > 0.0 {
            let xi = (mag * mag / (n * n) - 1.0).max(0.0);
            xi / (1.0 + xi)
        } else {
            1.0
        };
        g.max(floor)
    });
    invert_spectrogram(&spec)
}

/// Per-bin gate opened where `|X|` reaches the bin's peak scaled by
/// `gate_threshold_db`, smoothed over frames with one-pole attack/release.
pub fn spectral_gate(audio: &AudioBuffer, p: &NoiseParams) -> Result<AudioBuffer> {
    p.validate()?;
    let mut spec = analyse(audio)?;
    let mags = spec.magnitudes();
    let bins = spec.n_bins();
    let scale = db_to_amp(p.gate_threshold_db);
    let thresholds: Vec<f64> = (0..bins)
        .map(|k| mags.iter().map(|f| f[k]).fold(0.0, f64::max) * scale)
        .collect();
    let hop_ms = spec.config().hop_ms;
    let coeff = |tau_ms: f64| {
        if tau_ms <= 0.0 {
            0.0
        } else {
            (-hop_ms / tau_ms).exp()
        }
    };
    let (attack, release) = (coeff(p.gate_attack_ms), coeff(p.gate_release_ms));

    let mut gains = vec![vec![0.0; bins]; mags.len()];
    for k in 0..bins {
        // A bin with no energy has nothing to gate; it keeps the state of
        // the nearest frame that does.
        let decide = |t: usize| (mags[t][k] > 0.0).then(|| if mags[t][k] >= thresholds[k] { 1.0 } else { 0.0 });
        let mut g = (0..mags.len()).find_map(decide).unwrap_or(0.0);
        for t in 0..mags.len() {
            if let Some(target) = decide(t) {
                let c = if target > g { attack } else { release };
                g = c * g + (1.0 - c) * target;
            }
            gains[t][k] = g;
        }
    }
    apply_gain(&mut spec, |t, k, _| gains[t][k]);
    invert_spectrogram(&spec)
}
