//! Built-in sound classes: each label owns a fixed magnitude-spectrum shape
//! made of Gaussian bumps. The synthetic corpus renders audio from these
//! shapes and the proxy scorer measures its reference profiles from them.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

/// Spectral bump: centre (Hz), standard deviation (Hz), relative gain.
type Bump = (f64, f64, f64);

#[derive(Debug)]
pub struct SoundClass {
    pub label: &'static str,
    bumps: &'static [Bump],
}

/// Shape value everywhere outside the bumps.
const SHAPE_FLOOR: f64 = 1e-3;

pub const CLASSES: [SoundClass; 8] = [
    SoundClass {
        label: "dog",
        bumps: &[(550.0, 120.0, 1.0), (1500.0, 200.0, 0.6)],
    },
    SoundClass {
        label: "speech",
        bumps: &[(250.0, 60.0, 1.0), (800.0, 150.0, 0.7), (2300.0, 250.0, 0.3)],
    },
    SoundClass {
        label: "engine",
        bumps: &[(110.0, 40.0, 1.0), (220.0, 40.0, 0.7), (330.0, 40.0, 0.4)],
    },
    SoundClass {
        label: "waterfall",
        bumps: &[(2800.0, 500.0, 1.0)],
    },
    SoundClass {
        label: "bird",
        bumps: &[(3300.0, 120.0, 1.0), (1650.0, 80.0, 0.3)],
    },
    SoundClass {
        label: "siren",
        bumps: &[(950.0, 60.0, 1.0), (1900.0, 60.0, 0.4)],
    },
    SoundClass {
        label: "drum",
        bumps: &[(70.0, 30.0, 1.0), (180.0, 60.0, 0.6)],
    },
    SoundClass {
        label: "violin",
        bumps: &[(660.0, 25.0, 1.0), (1320.0, 25.0, 0.6), (1980.0, 25.0, 0.4)],
    },
];

pub fn class(label: &str) -> Option<&'static SoundClass> {
    CLASSES.iter().find(|c| c.label == label)
}

impl SoundClass {
    /// Relative magnitude at `hz`.
    pub fn shape_at(&self, hz: f64) -> f64 {
        SHAPE_FLOOR
            + self
                .bumps
                .iter()
                .map(|&(c, w, g)| g * (-0.5 * ((hz - c) / w).powi(2)).exp())
                .sum::<f64>()
    }

    /// `n` samples of Gaussian noise filtered to this class's shape, unit RMS.
    pub fn render(&self, n: usize, sample_rate_hz: u32, seed: u64) -> Vec<f64> {
        render_shaped(n, sample_rate_hz, seed, |hz| self.shape_at(hz))
    }
}

/// Gaussian noise with magnitude response `shape`, normalised to unit RMS.
pub fn render_shaped(
    n: usize,
    sample_rate_hz: u32,
    seed: u64,
    shape: impl Fn(f64) -> f64,
) -> Vec<f64> {
    if n == 0 {
        return Vec::new();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut buf: Vec<Complex64> = (0..n)
        .map(|_| Complex64::new(StandardNormal.sample(&mut rng), 0.0))
        .collect();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(n).process(&mut buf);
    for (k, c) in buf.iter_mut().enumerate() {
        let folded = k.min(n - k);
        *c *= shape(folded as f64 * sample_rate_hz as f64 / n as f64);
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    let y: Vec<f64> = buf.iter().map(|c| c.re).collect();
    let rms = (y.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt();
    if rms == 0.0 {
        return y;
    }
    y.into_iter().map(|v| v / rms).collect()
}
