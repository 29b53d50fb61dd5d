//! Shared fixtures for the integration tests: a stub HTTP backend on a
//! plain `TcpListener`, signal fixtures, and oracles computed with direct
//! sums rather than the crate's FFT path.

#![allow(dead_code)]

use std::f64::consts::PI;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use avalign_core::audio::AudioBuffer;
use avalign_core::backend::BackendConfig;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub const SR: u32 = 8000;

/// One request as the stub saw it.
#[derive(Debug, Clone)]
pub struct Seen {
    pub authorization: Option<String>,
    pub body: String,
}

/// The stub's answer to one request.
pub struct Reply {
    pub status: u16,
    pub body: String,
    pub delay: Duration,
}

impl Reply {
    pub fn ok(body: impl Into<String>) -> Self {
        Self {
            status: 200,
            body: body.into(),
            delay: Duration::ZERO,
        }
    }

    pub fn status(status: u16, body: impl Into<String>) -> Self {
        Self {
            status,
            body: body.into(),
            delay: Duration::ZERO,
        }
    }

    pub fn delayed(mut self, d: Duration) -> Self {
        self.delay = d;
        self
    }
}

type Handler = dyn Fn(usize, &Seen) -> Reply + Send + Sync;

/// A backend stub answering every POST with `handler(request_index, request)`.
pub struct Stub {
    pub url: String,
    seen: Arc<Mutex<Vec<Seen>>>,
}

impl Stub {
    pub fn start(handler: impl Fn(usize, &Seen) -> Reply + Send + Sync + 'static) -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").expect("bind stub");
        let url = format!("http://{}/v1/avalign", listener.local_addr().unwrap());
        let seen = Arc::new(Mutex::new(Vec::new()));
        let handler: Arc<Handler> = Arc::new(handler);
        let log = seen.clone();
        thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(stream) = stream else { continue };
                let (log, handler) = (log.clone(), handler.clone());
                thread::spawn(move || {
                    let _ = serve(stream, &log, &*handler);
                });
            }
        });
        Self { url, seen }
    }

    /// Always answers 200 with `body`.
    pub fn fixed(body: &str) -> Self {
        let body = body.to_string();
        Self::start(move |_, _| Reply::ok(body.clone()))
    }

    pub fn requests(&self) -> Vec<Seen> {
        self.seen.lock().unwrap().clone()
    }

    pub fn config(&self) -> BackendConfig {
        BackendConfig {
            url: Some(self.url.clone()),
            timeout_ms: 2_000,
            retries: 0,
            retry_backoff_ms: 1,
            ..BackendConfig::default()
        }
    }
}

fn serve(stream: TcpStream, log: &Mutex<Vec<Seen>>, handler: &Handler) -> std::io::Result<()> {
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut len = 0usize;
    let mut authorization = None;
    let mut line = String::new();
    reader.read_line(&mut line)?;
    loop {
        line.clear();
        if reader.read_line(&mut line)? == 0 || line == "\r\n" {
            break;
        }
        let (name, value) = line.split_once(':').unwrap_or((&line, ""));
        let value = value.trim().to_string();
        match name.to_ascii_lowercase().as_str() {
            "content-length" => len = value.parse().unwrap_or(0),
            "authorization" => authorization = Some(value),
            _ => {}
        }
    }
    let mut body = vec![0u8; len];
    reader.read_exact(&mut body)?;
    let seen = Seen {
        authorization,
        body: String::from_utf8_lossy(&body).into_owned(),
    };
    let index = {
        let mut l = log.lock().unwrap();
        l.push(seen.clone());
        l.len() - 1
    };
    let reply = handler(index, &seen);
    thread::sleep(reply.delay);
    let mut stream = stream;
    write!(
        stream,
        "HTTP/1.1 {} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{}",
        reply.status,
        reply.body.len(),
        reply.body
    )?;
    stream.flush()
}

/// A URL nothing listens on.
pub fn dead_url() -> String {
    let l = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = l.local_addr().unwrap();
    drop(l);
    format!("http://{addr}/")
}

pub fn buf(samples: Vec<f64>) -> AudioBuffer {
    AudioBuffer::new(samples, SR).unwrap()
}

pub fn sine(freq: f64, n: usize, amp: f64) -> Vec<f64> {
    (0..n).map(|i| amp * (2.0 * PI * freq * i as f64 / SR as f64).sin()).collect()
}

pub fn gaussian(n: usize, sigma: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = Normal::new(0.0, sigma).unwrap();
    (0..n).map(|_| d.sample(&mut rng)).collect()
}

pub fn energy(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
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

/// Tone in the middle two thirds of three seconds, silent elsewhere, plus
/// white noise scaled to `snr_db` over the whole signal.
pub struct ToneInNoise {
    pub clean: Vec<f64>,
    pub noisy: AudioBuffer,
}

pub fn tone_in_noise(freq: f64, snr_db: f64, seed: u64) -> ToneInNoise {
    let n = 3 * SR as usize;
    let mut clean = sine(freq, n, 0.3);
    for (i, v) in clean.iter_mut().enumerate() {
        if i < n / 6 || i >= 5 * n / 6 {
            *v = 0.0;
        }
    }
    let noise = gaussian(n, 1.0, seed);
    let scale = (energy(&clean) / energy(&noise) / 10f64.powf(snr_db / 10.0)).sqrt();
    let noisy = clean
        .iter()
        .zip(&noise)
        .map(|(c, z)| (c + scale * z).clamp(-1.0, 1.0))
        .collect();
    ToneInNoise {
        clean,
        noisy: buf(noisy),
    }
}

/// The fixture family the filter checks run over.
pub fn tone_family() -> Vec<(f64, u64)> {
    [250.0, 440.0, 1000.0, 2000.0]
        .into_iter()
        .flat_map(|f| (1..=3).map(move |s| (f, s)))
        .collect()
}

pub const PEAK_DFT_LEN: usize = 4096;

/// Bin spacing of [`dft_peak_hz`].
pub fn peak_bin_hz() -> f64 {
    SR as f64 / PEAK_DFT_LEN as f64
}

/// Direct-sum DFT magnitudes for bins `0..=n/2`.
pub fn dft_mags(x: &[f64]) -> Vec<f64> {
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

/// Peak frequency of a Hann-windowed excerpt from the middle of `x`.
pub fn dft_peak_hz(x: &[f64]) -> f64 {
    assert!(x.len() >= PEAK_DFT_LEN);
    let start = (x.len() - PEAK_DFT_LEN) / 2;
    let seg: Vec<f64> = (0..PEAK_DFT_LEN)
        .map(|j| x[start + j] * 0.5 * (1.0 - (2.0 * PI * j as f64 / PEAK_DFT_LEN as f64).cos()))
        .collect();
    let mags = dft_mags(&seg);
    let k = (1..mags.len()).max_by(|&a, &b| mags[a].total_cmp(&mags[b])).unwrap();
    k as f64 * peak_bin_hz()
}
