//! Run configuration: one TOML file with a table per concern. Command-line flags override
//! file values, which override the built-in defaults.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use ufe_core::acoustics::SimulationConfig;
use ufe_core::models::ModelConfig;
use ufe_core::runtime::{EvalConfig, TrainConfig};
use ufe_core::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IoConfig {
    /// Speaker source list (`speaker<TAB>path[<TAB>split]`).
    pub sources: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub train_manifest: Option<PathBuf>,
    pub valid_manifest: Option<PathBuf>,
    pub manifest: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub input: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateConfig {
    pub count: usize,
    pub seed: u64,
    /// Generate a synthetic speaker corpus when no source list is given.
    pub synthetic_speakers: usize,
    pub utterances_per_speaker: usize,
    pub valid_speakers: usize,
    pub test_speakers: usize,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self {
            count: 10,
            seed: 0,
            synthetic_speakers: 72,
            utterances_per_speaker: 3,
            valid_speakers: 8,
            test_speakers: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradcheckConfig {
    pub seed: u64,
    /// Random parameter coordinates of the assembled E2E graph.
    pub coords: usize,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self { seed: 0, coords: 100 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Worker threads; 0 uses every logical core.
    pub jobs: usize,
    pub io: IoConfig,
    pub simulate: SimulateConfig,
    pub simulation: SimulationConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub gradcheck: GradcheckConfig,
}

impl RunConfig {
    /// Defaults, or the file's contents when a path is given.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config file {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    /// Writes the resolved configuration as `config.toml` in `dir`.
    pub fn echo(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::Config(format!("cannot create {}: {e}", dir.display())))?;
        let p = dir.join("config.toml");
        std::fs::write(&p, self.to_toml()).map_err(|e| Error::Config(format!("cannot write {}: {e}", p.display())))
    }
}

pub fn require<'a>(v: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path> {
    v.as_deref()
        .ok_or_else(|| Error::Config(format!("missing `{flag}` (flag or [io] entry in the config file)")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips_through_toml() {
        let mut c = RunConfig::default();
        c.io.out = Some("runs/a".into());
        c.train.max_epochs = 3;
        let back: RunConfig = toml::from_str(&c.to_toml()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_toml(), c.to_toml());
    }

    #[test]
    fn partial_files_keep_defaults_and_unknown_keys_fail() {
        let c: RunConfig = toml::from_str("[model]\nhidden = 32\n").unwrap();
        assert_eq!(c.model.hidden, 32);
        assert_eq!(c.model.layers, ModelConfig::default().layers);
        assert!(toml::from_str::<RunConfig>("[model]\nhiden = 32\n").is_err());
    }
}
