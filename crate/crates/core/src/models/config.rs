use serde::{Deserialize, Serialize};

use crate::array::{ArrayGeometry, BeamformerDesign};
use crate::dsp::{StftConfig, SAMPLE_RATE_HZ};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Modular pipeline: unmixing masks, grid localization, hard beam selection, extraction.
    Ufe,
    /// Attention over the beam and angle pools replaces localization and selection.
    E2e,
}

impl std::str::FromStr for Mode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ufe" => Ok(Mode::Ufe),
            "e2e" | "e2e_ufe" | "e2e-ufe" => Ok(Mode::E2e),
            other => Err(Error::Config(format!("unknown model mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub mode: Mode,
    pub hidden: usize,
    pub layers: usize,
    pub dropout: f64,
    /// Width `K` of each pre-separation head.
    pub embedding_dim: usize,
    /// Attention projection width `D`.
    pub projection_dim: usize,
    pub num_beams: usize,
    pub num_angles: usize,
    /// Feed cosIPD of the raw array to the extraction network. Defaults to on for `ufe`
    /// and off for `e2e`.
    pub extraction_ipd: Option<bool>,
    pub beamformer: BeamformerDesign,
    pub diagonal_loading: f64,
    pub stft: StftConfig,
    pub ssl_epsilon: f64,
    pub geometry: Option<ArrayGeometry>,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            mode: Mode::E2e,
            hidden: 128,
            layers: 3,
            dropout: 0.2,
            embedding_dim: 257,
            projection_dim: 64,
            num_beams: 18,
            num_angles: 36,
            extraction_ipd: None,
            beamformer: BeamformerDesign::Superdirective,
            diagonal_loading: 1e-2,
            stft: StftConfig::default(),
            ssl_epsilon: 1e-6,
            geometry: None,
            seed: 0,
        }
    }
}

impl ModelConfig {
    /// The full-width configuration: three 512-unit layers.
    pub fn paper_scale(mode: Mode) -> Self {
        Self {
            mode,
            hidden: 512,
            ..Self::default()
        }
    }

    pub fn bins(&self) -> usize {
        self.stft.bins()
    }

    pub fn uses_ipd(&self) -> bool {
        self.extraction_ipd.unwrap_or(self.mode == Mode::Ufe)
    }

    pub fn geometry(&self) -> ArrayGeometry {
        self.geometry.clone().unwrap_or_else(ArrayGeometry::reference)
    }

    pub fn sample_rate_hz(&self) -> u32 {
        SAMPLE_RATE_HZ
    }

    pub fn validate(&self) -> Result<()> {
        self.stft.validate()?;
        let positive = [
            ("hidden", self.hidden),
            ("layers", self.layers),
            ("embedding_dim", self.embedding_dim),
            ("projection_dim", self.projection_dim),
            ("num_beams", self.num_beams),
            ("num_angles", self.num_angles),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} must be in [0, 1)", self.dropout)));
        }
        if self.mode == Mode::Ufe && self.embedding_dim != self.bins() {
            return Err(Error::Config(format!(
                "ufe mode uses the unmixing heads as masks, so embedding_dim must equal {} bins",
                self.bins()
            )));
        }
        Ok(())
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let c: Self = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("model config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip_and_defaults() {
        let c = ModelConfig {
            mode: Mode::Ufe,
            hidden: 32,
            ..ModelConfig::default()
        };
        let back = ModelConfig::from_toml_str(&c.to_toml_string()).unwrap();
        assert_eq!(back, c);
        assert!(back.uses_ipd());
        assert!(!ModelConfig::default().uses_ipd());
        let partial = ModelConfig::from_toml_str("mode = \"e2e\"\nhidden = 16\n").unwrap();
        assert_eq!(partial.projection_dim, 64);
        assert!(ModelConfig::from_toml_str("hiden = 3").is_err());
    }

    #[test]
    fn ufe_requires_bin_wide_heads() {
        let c = ModelConfig {
            mode: Mode::Ufe,
            embedding_dim: 100,
            ..ModelConfig::default()
        };
        assert!(c.validate().is_err());
        let e = ModelConfig {
            embedding_dim: 100,
            ..ModelConfig::default()
        };
        assert!(e.validate().is_ok());
    }
}
