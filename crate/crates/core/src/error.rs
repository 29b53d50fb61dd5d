use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the pipeline can report.
///
/// Per-pair failures inside a batch are recorded in the trace instead of
/// aborting the run; see [`crate::workflow::run_batch`].
#[derive(Debug, Error)]
pub enum Error {
    #[error("audio buffer is empty or shorter than one analysis window")]
    EmptyAudio,

    #[error("audio too short: need at least {needed} samples, got {got}")]
    TooShort { needed: usize, got: usize },

    #[error("window sum fell below 1e-8 at sample {index} during overlap-add")]
    DegenerateWindow { index: usize },

    #[error("parameter `{name}` = {value} outside legal range {range}")]
    ParamOutOfRange {
        name: &'static str,
        value: f64,
        range: &'static str,
    },

    #[error("target-RMS volume adjustment requested on silent audio")]
    SilentInput,

    #[error("video feature series is empty")]
    EmptyFeatures,

    #[error("invalid value: {0}")]
    InvalidValue(String),

    #[error("backend unreachable at {url}: {reason}")]
    BackendUnreachable { url: String, reason: String },

    #[error("backend returned a malformed response: {0}")]
    BackendMalformedResponse(String),

    #[error("backend request timed out after {0} ms")]
    Timeout(u64),

    #[error("captions carry no feature map; the rule planner needs builtin captions")]
    MissingFeatures,

    #[error("backend plan could not be parsed: {0}")]
    UnparseablePlan(String),

    #[error("illegal action in plan: {0}")]
    IllegalAction(String),

    #[error("no class profile for labels {labels:?} and envelope fallback is disabled")]
    UnknownLabelNoFallback { labels: Vec<String> },

    #[error("audio ({audio_s:.3} s) and video ({video_s:.3} s) durations differ by more than 4x")]
    DurationMismatch { audio_s: f64, video_s: f64 },

    #[error("mixture cell needs {needed} pairs but only {available} are available")]
    InsufficientPairs { needed: usize, available: usize },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("manifest references missing audio file {0}")]
    MissingAudioFile(PathBuf),

    #[error("duplicate pair id `{0}`")]
    DuplicatePairId(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("wav: {0}")]
    Wav(#[from] hound::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn range(name: &'static str, value: f64, range: &'static str) -> Self {
        Error::ParamOutOfRange { name, value, range }
    }
}
