//! Mono PCM buffers, WAV I/O and sample-rate conversion.
//!
//! Everything downstream works on mono audio at [`PIPELINE_RATE_HZ`]. WAV
//! files of any rate and channel count are mixed down by averaging channels
//! and resampled with a windowed-sinc interpolator at ingest.

use std::f64::consts::PI;
use std::path::Path;

use crate::error::{Error, Result};

/// Working sample rate of every action and scorer.
pub const PIPELINE_RATE_HZ: u32 = 8000;

/// Mono PCM samples with their sample rate.
///
/// Amplitudes are finite and within `[-1, 1]`; constructors enforce this.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioBuffer {
    samples: Vec<f64>,
    sample_rate_hz: u32,
}

impl AudioBuffer {
    /// Builds a buffer, rejecting non-finite or out-of-range samples.
    pub fn new(samples: Vec<f64>, sample_rate_hz: u32) -> Result<Self> {
        if sample_rate_hz == 0 {
            return Err(Error::InvalidValue("sample rate must be positive".into()));
        }
        if let Some((i, x)) = samples
            .iter()
            .enumerate()
            .find(|(_, x)| !x.is_finite() || x.abs() > 1.0)
        {
            return Err(Error::InvalidValue(format!(
                "sample {i} = {x} is not a finite amplitude in [-1, 1]"
            )));
        }
        Ok(Self {
            samples,
            sample_rate_hz,
        })
    }

    /// Builds a buffer after replacing non-finite samples with zero and
    /// hard-limiting the rest to `[-1, 1]`.
    pub fn from_samples_clamped(mut samples: Vec<f64>, sample_rate_hz: u32) -> Self {
        assert!(sample_rate_hz > 0, "sample rate must be positive");
        sanitize(&mut samples);
        Self {
            samples,
            sample_rate_hz,
        }
    }

    pub fn silence(len: usize, sample_rate_hz: u32) -> Self {
        Self::from_samples_clamped(vec![0.0; len], sample_rate_hz)
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn sample_rate_hz(&self) -> u32 {
        self.sample_rate_hz
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate_hz as f64
    }

    pub fn rms(&self) -> f64 {
        rms(&self.samples)
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0f64, |m, x| m.max(x.abs()))
    }

    /// Converts to `target_hz` with the windowed-sinc resampler.
    pub fn resampled(&self, target_hz: u32) -> AudioBuffer {
        if target_hz == self.sample_rate_hz {
            return self.clone();
        }
        let ratio = target_hz as f64 / self.sample_rate_hz as f64;
        let out_len = (self.samples.len() as f64 * ratio).round() as usize;
        AudioBuffer::from_samples_clamped(resample_to_len(&self.samples, out_len), target_hz)
    }
}

/// Root-mean-square of a slice; zero for an empty slice.
pub fn rms(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
}

pub(crate) fn sanitize(samples: &mut [f64]) {
    for x in samples.iter_mut() {
        *x = if x.is_finite() { x.clamp(-1.0, 1.0) } else { 0.0 };
    }
}

/// Half-width of the sinc kernel, in input samples at unity cutoff.
const SINC_HALF_WIDTH: f64 = 24.0;

/// Resamples `x` to exactly `out_len` samples.
///
/// The time axis is scaled by `out_len / x.len()`. When shrinking, the
/// kernel cutoff drops to the output Nyquist so the result is band-limited.
pub fn resample_to_len(x: &[f64], out_len: usize) -> Vec<f64> {
    if x.is_empty() || out_len == 0 {
        return vec![0.0; out_len];
    }
    if out_len == x.len() {
        return x.to_vec();
    }
    let ratio = out_len as f64 / x.len() as f64;
    let cutoff = ratio.min(1.0);
    let half = SINC_HALF_WIDTH / cutoff;
    let n = x.len() as isize;
    (0..out_len)
        .map(|i| {
            let t = i as f64 / ratio;
            let lo = (t - half).ceil() as isize;
            let hi = (t + half).floor() as isize;
            let mut acc = 0.0;
            for j in lo.max(0)..=hi.min(n - 1) {
                let d = t - j as f64;
                let w = 0.5 * (1.0 + (PI * d / half).cos());
                acc += x[j as usize] * cutoff * sinc(cutoff * d) * w;
            }
            acc
        })
        .collect()
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

/// Sample encodings supported by [`write_wav`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WavFormat {
    Pcm16,
    Float32,
}

/// Reads a WAV file at its native rate, averaging channels to mono.
pub fn read_wav(path: &Path) -> Result<AudioBuffer> {
    let reader = hound::WavReader::open(path).map_err(|e| match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => Error::Wav(other),
    })?;
    let spec = reader.spec();
    let channels = spec.channels.max(1) as usize;
    let interleaved: Vec<f64> = match spec.sample_format {
        hound::SampleFormat::Int => {
            let scale = (1i64 << (spec.bits_per_sample - 1)) as f64;
            reader
                .into_samples::<i32>()
                .map(|s| s.map(|v| v as f64 / scale))
                .collect::<std::result::Result<_, _>>()?
        }
        hound::SampleFormat::Float => reader
            .into_samples::<f32>()
            .map(|s| s.map(|v| v as f64))
            .collect::<std::result::Result<_, _>>()?,
    };
    let mono: Vec<f64> = if channels == 1 {
        interleaved
    } else {
        interleaved
            .chunks(channels)
            .map(|frame| frame.iter().sum::<f64>() / channels as f64)
            .collect()
    };
    Ok(AudioBuffer::from_samples_clamped(mono, spec.sample_rate))
}

/// Reads a WAV file and converts it to the pipeline's mono 8 kHz working form.
pub fn load_for_pipeline(path: &Path) -> Result<AudioBuffer> {
    Ok(read_wav(path)?.resampled(PIPELINE_RATE_HZ))
}

fn wav_spec(sample_rate_hz: u32, format: WavFormat) -> hound::WavSpec {
    hound::WavSpec {
        channels: 1,
        sample_rate: sample_rate_hz,
        bits_per_sample: match format {
            WavFormat::Pcm16 => 16,
            WavFormat::Float32 => 32,
        },
        sample_format: match format {
            WavFormat::Pcm16 => hound::SampleFormat::Int,
            WavFormat::Float32 => hound::SampleFormat::Float,
        },
    }
}

fn write_samples<W: std::io::Write + std::io::Seek>(
    mut writer: hound::WavWriter<W>,
    audio: &AudioBuffer,
    format: WavFormat,
) -> Result<()> {
    match format {
        WavFormat::Pcm16 => {
            for &x in audio.samples() {
                let v = (x * 32768.0).round().clamp(i16::MIN as f64, i16::MAX as f64);
                writer.write_sample(v as i16)?;
            }
        }
        WavFormat::Float32 => {
            for &x in audio.samples() {
                writer.write_sample(x as f32)?;
            }
        }
    }
    writer.finalize()?;
    Ok(())
}

/// Writes a mono WAV file, creating parent directories.
///
/// 16-bit output maps `x` to `round(x * 32768)` clamped to the `i16` range,
/// which inverts the reader exactly for audio that came from a 16-bit file.
pub fn write_wav(path: &Path, audio: &AudioBuffer, format: WavFormat) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    let writer = hound::WavWriter::create(path, wav_spec(audio.sample_rate_hz(), format))
        .map_err(|e| match e {
            hound::Error::IoError(io) => Error::io(path, io),
            other => Error::Wav(other),
        })?;
    write_samples(writer, audio, format)
}

/// The bytes [`write_wav`] would produce.
pub fn encode_wav(audio: &AudioBuffer, format: WavFormat) -> Result<Vec<u8>> {
    let mut cursor = std::io::Cursor::new(Vec::new());
    let writer = hound::WavWriter::new(&mut cursor, wav_spec(audio.sample_rate_hz(), format))?;
    write_samples(writer, audio, format)?;
    Ok(cursor.into_inner())
}
