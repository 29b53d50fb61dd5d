//! Line-delimited pair manifests.
//!
//! One JSON object per line with sorted keys. Fields the reader does not know
//! are kept and written back unchanged, so `write(read(x)) == x` for any
//! canonically written file.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::CorruptionSpec;
use crate::error::{Error, Result};
use crate::video::VideoFeatureSeries;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Original,
    Synthetic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AVPairRecord {
    pub pair_id: String,
    /// Relative paths resolve against the manifest's directory.
    pub audio_path: PathBuf,
    pub video_features: VideoFeatureSeries,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground_truth: Option<CorruptionSpec>,
    pub provenance: Provenance,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

impl AVPairRecord {
    pub fn resolve_audio(&self, root: &Path) -> PathBuf {
        if self.audio_path.is_absolute() {
            self.audio_path.clone()
        } else {
            root.join(&self.audio_path)
        }
    }
}

/// The canonical one-line encoding of a record.
pub fn to_canonical_line(record: &AVPairRecord) -> Result<String> {
    canonical_json(record)
}

/// Compact JSON with object keys sorted at every level.
pub fn canonical_json<T: Serialize>(value: &T) -> Result<String> {
    Ok(serde_json::to_string(&serde_json::to_value(value)?)?)
}

pub fn parse_manifest(text: &str) -> Result<Vec<AVPairRecord>> {
    let mut records = Vec::new();
    let mut ids = HashSet::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: AVPairRecord = serde_json::from_str(line).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        record.video_features.validate().map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        if !ids.insert(record.pair_id.clone()) {
            return Err(Error::DuplicatePairId(record.pair_id));
        }
        records.push(record);
    }
    Ok(records)
}

pub fn read_manifest(path: &Path) -> Result<Vec<AVPairRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_manifest(&text)
}

pub fn render_manifest(records: &[AVPairRecord]) -> Result<String> {
    let mut out = String::new();
    for r in records {
        out += &to_canonical_line(r)?;
        out.push('\n');
    }
    Ok(out)
}

pub fn write_manifest(records: &[AVPairRecord], path: &Path) -> Result<()> {
    write_text(path, &render_manifest(records)?)
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Fails on the first record whose audio file does not exist.
pub fn validate_audio_paths(records: &[AVPairRecord], root: &Path) -> Result<()> {
    for r in records {
        let p = r.resolve_audio(root);
        if !p.is_file() {
            return Err(Error::MissingAudioFile(p));
        }
    }
    Ok(())
}

/// The directory relative audio paths in a manifest resolve against.
pub fn manifest_root(path: &Path) -> PathBuf {
    path.parent()
        .filter(|p| !p.as_os_str().is_empty())
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."))
}
