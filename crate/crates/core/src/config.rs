//! The pipeline configuration file (TOML).
//!
//! Every section and field is optional; missing values take their
//! defaults. Precedence, lowest first: built-in defaults, the file, the
//! backend environment variables, then whatever the caller overrides.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::backend::BackendConfig;
use crate::corpus::study::MixtureStudyConfig;
use crate::corpus::synth::SynthConfig;
use crate::error::{Error, Result};
use crate::workflow::WorkflowConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Worker threads for batch runs and studies.
    pub parallelism: usize,
    pub workflow: WorkflowConfig,
    pub backend: BackendConfig,
    pub synth: SynthConfig,
    pub mixture: MixtureStudyConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            parallelism: 1,
            workflow: WorkflowConfig::default(),
            backend: BackendConfig::default(),
            synth: SynthConfig::default(),
            mixture: MixtureStudyConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads `path` (defaults fill the gaps), then applies the backend
    /// environment variables.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg = Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })?;
        Ok(cfg.with_env())
    }

    /// Defaults, or the file when given; environment applied either way.
    pub fn resolve(path: Option<&Path>) -> Result<Self> {
        match path {
            Some(p) => Self::load(p),
            None => Ok(Self::default().with_env()),
        }
    }

    pub fn with_env(mut self) -> Self {
        self.backend = self.backend.with_env();
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.parallelism == 0 {
            return Err(Error::range("parallelism", 0.0, ">= 1"));
        }
        self.workflow.validate()?;
        self.synth.validate()?;
        self.mixture.validate()
    }

    /// TOML rendering with the backend token masked.
    pub fn effective_toml(&self) -> Result<String> {
        let mut shown = self.clone();
        if shown.backend.token.is_some() {
            shown.backend.token = Some("<redacted>".into());
        }
        toml::to_string(&shown).map_err(|e| Error::Config(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::planning::PlannerKind;

    #[test]
    fn empty_file_is_defaults() {
        assert_eq!(PipelineConfig::from_toml("").unwrap(), PipelineConfig::default());
    }

    #[test]
    fn partial_sections_keep_other_defaults() {
        let cfg = PipelineConfig::from_toml(
            "[workflow]\nmax_cycles = 3\nplanner = \"random\"\n[workflow.rules]\nsnr_db = 6.0\n",
        )
        .unwrap();
        assert_eq!(cfg.workflow.max_cycles, 3);
        assert_eq!(cfg.workflow.planner, PlannerKind::Random);
        assert_eq!(cfg.workflow.rules.snr_db, 6.0);
        assert_eq!(cfg.workflow.threshold, 0.85);
        assert_eq!(cfg.workflow.rules.silence_ratio, 0.2);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(matches!(
            PipelineConfig::from_toml("[workflow]\nmax_cycle = 3\n"),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn effective_dump_round_trips_and_hides_token() {
        let mut cfg = PipelineConfig::default();
        cfg.backend.token = Some("s3cret".into());
        cfg.workflow.seed = 42;
        let text = cfg.effective_toml().unwrap();
        assert!(!text.contains("s3cret"));
        let back = PipelineConfig::from_toml(&text).unwrap();
        assert_eq!(back.workflow, cfg.workflow);
        assert_eq!(back.synth, cfg.synth);
    }
}
