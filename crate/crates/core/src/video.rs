//! The visual side of a pair: a per-frame activity series plus labels.
//!
//! Pixels are never decoded. An external extractor (or the synthetic
//! corpus) supplies motion/activity magnitudes at a fixed frame rate.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoFeatureSeries {
    pub frame_rate_hz: f64,
    pub activity: Vec<f64>,
    #[serde(default)]
    pub labels: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description_hint: Option<String>,
}

impl VideoFeatureSeries {
    pub fn new(frame_rate_hz: f64, activity: Vec<f64>, labels: Vec<String>) -> Result<Self> {
        let v = Self {
            frame_rate_hz,
            activity,
            labels,
            description_hint: None,
        };
        v.validate()?;
        Ok(v)
    }

    pub fn validate(&self) -> Result<()> {
        if self.activity.is_empty() {
            return Err(Error::EmptyFeatures);
        }
        if !(self.frame_rate_hz.is_finite() && self.frame_rate_hz > 0.0) {
            return Err(Error::InvalidValue(format!(
                "frame_rate_hz must be positive, got {}",
                self.frame_rate_hz
            )));
        }
        if let Some(bad) = self.activity.iter().find(|a| !(a.is_finite() && **a >= 0.0)) {
            return Err(Error::InvalidValue(format!(
                "activity values must be finite and non-negative, got {bad}"
            )));
        }
        Ok(())
    }

    pub fn duration_s(&self) -> f64 {
        self.activity.len() as f64 / self.frame_rate_hz
    }
}

/// Indices of local maxima standing at least half a standard deviation
/// above the mean, at least `min_sep_s` apart. Ties keep the earlier peak.
pub fn find_peaks(series: &[f64], rate_hz: f64, min_sep_s: f64) -> Vec<usize> {
    let n = series.len();
    if n < 3 {
        return Vec::new();
    }
    let mean = series.iter().sum::<f64>() / n as f64;
    let std = (series.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
    if std == 0.0 {
        return Vec::new();
    }
    let floor = mean + 0.5 * std;
    let min_sep = (min_sep_s * rate_hz).ceil() as usize;
    let mut peaks: Vec<usize> = Vec::new();
    for i in 1..n - 1 {
        let v = series[i];
        if v < floor || v <= series[i - 1] || v < series[i + 1] {
            continue;
        }
        match peaks.last() {
            Some(&p) if i - p < min_sep => {
                if v > series[p] {
                    *peaks.last_mut().unwrap() = i;
                }
            }
            _ => peaks.push(i),
        }
    }
    peaks
}

/// Minimum spacing between counted peaks.
pub const PEAK_MIN_SEPARATION_S: f64 = 0.15;

/// Peaks per second of `series` sampled at `rate_hz`.
pub fn peak_rate(series: &[f64], rate_hz: f64) -> f64 {
    if series.is_empty() {
        return 0.0;
    }
    find_peaks(series, rate_hz, PEAK_MIN_SEPARATION_S).len() as f64 / (series.len() as f64 / rate_hz)
}
