//! Run configuration (TOML). Every section is optional; unknown keys are
//! rejected. The resolved configuration is echoed next to each output.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsio::write_atomic;
use crate::motion::{CorpusConfig, SplitSpec};
use crate::nn::TrainConfig;
use crate::nonlin::CorruptionParams;
use crate::suitsim::RoutingLayout;
use crate::teleop::SinkMode;

pub const RESOLVED_CONFIG_FILE: &str = "resolved_config.toml";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    /// Root of all outputs: corpus/, models/, reports.
    pub out_dir: PathBuf,
    /// Routing layout JSON; the built-in layout when absent.
    pub layout: Option<PathBuf>,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self {
            out_dir: PathBuf::from("run"),
            layout: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub n_steps: usize,
    pub lnnet_hidden: usize,
    pub ennet_hidden: usize,
    pub fc_widths: Vec<usize>,
    pub mlp_hidden: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            n_steps: 10,
            lnnet_hidden: 32,
            ennet_hidden: 64,
            fc_widths: vec![512, 256, 128, 64, 32],
            mlp_hidden: 25,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TeleopConfig {
    pub addr: String,
    pub mode: SinkMode,
    pub rate_hz: f64,
    pub loop_hz: f64,
    /// Acknowledgement delay of the sink in blocking mode.
    pub ack_delay_ms: u64,
    /// Stream run time in seconds; 0 runs until interrupted.
    pub duration_s: f64,
}

impl Default for TeleopConfig {
    fn default() -> Self {
        Self {
            addr: "127.0.0.1:5555".into(),
            mode: SinkMode::Streaming,
            rate_hz: 250.0,
            loop_hz: 100.0,
            ack_delay_ms: 25,
            duration_s: 0.0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub paths: PathsConfig,
    pub corpus: CorpusConfig,
    pub corruption: CorruptionParams,
    pub split: SplitSpec,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub teleop: TeleopConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Validation(format!("config: {e}")))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Validation(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| Error::Validation(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.corpus.validate()?;
        if self.corruption.enabled {
            self.corruption.resolve([1.0; 4])?;
        }
        if !(self.split.test_fraction > 0.0 && self.split.test_fraction < 1.0) {
            return Err(Error::Validation("split.test_fraction must be in (0, 1)".into()));
        }
        if self.model.n_steps == 0 {
            return Err(Error::Validation("model.n_steps must be >= 1".into()));
        }
        self.train.validate()?;
        let t = &self.teleop;
        if !(t.rate_hz > 0.0 && t.loop_hz > 0.0 && t.duration_s >= 0.0) {
            return Err(Error::Validation("teleop rates must be > 0 and duration >= 0".into()));
        }
        for (k, spec) in crate::nn::ModelKind::ALL.map(|k| (k, self.model_spec(k))) {
            spec.validate()
                .map_err(|e| Error::Validation(format!("model {k}: {e}")))?;
        }
        Ok(())
    }

    pub fn model_spec(&self, kind: crate::nn::ModelKind) -> crate::nn::ModelSpec {
        use crate::nn::{ModelKind, ModelSpec};
        let m = &self.model;
        let base = ModelSpec::new(kind, m.n_steps);
        match kind {
            ModelKind::LNNet => ModelSpec {
                lstm_hidden: m.lnnet_hidden,
                fc_widths: m.fc_widths.clone(),
                ..base
            },
            ModelKind::ENNet => ModelSpec {
                lstm_hidden: m.ennet_hidden,
                fc_widths: m.fc_widths.clone(),
                ..base
            },
            ModelKind::BaselineMLP => ModelSpec {
                fc_widths: vec![m.mlp_hidden],
                ..base
            },
        }
    }

    pub fn layout(&self) -> Result<RoutingLayout> {
        match &self.paths.layout {
            Some(p) => RoutingLayout::load(p),
            None => Ok(RoutingLayout::default_layout()),
        }
    }

    pub fn corpus_dir(&self) -> PathBuf {
        self.paths.out_dir.join("corpus")
    }

    pub fn models_dir(&self) -> PathBuf {
        self.paths.out_dir.join("models")
    }

    /// Writes the resolved configuration into `dir`.
    pub fn write_echo(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::file(dir, e))?;
        write_atomic(&dir.join(RESOLVED_CONFIG_FILE), self.to_toml().as_bytes())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let cfg = RunConfig::from_toml("").unwrap();
        assert_eq!(cfg, RunConfig::default());
        cfg.validate().unwrap();
    }

    #[test]
    fn partial_sections_and_round_trip() {
        let cfg = RunConfig::from_toml(
            "[corpus]\nscale = 0.1\n[train]\nepochs = 5\n[train.adam]\nlr = 0.01\n[teleop]\nmode = \"blocking\"\n",
        )
        .unwrap();
        assert_eq!(cfg.corpus.scale, 0.1);
        assert_eq!(cfg.corpus.seed, CorpusConfig::default().seed);
        assert_eq!(cfg.train.epochs, 5);
        assert_eq!(cfg.train.adam.lr, 0.01);
        assert_eq!(cfg.teleop.mode, SinkMode::Blocking);
        assert_eq!(RunConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        for bad in ["[corpus]\nscael = 0.1\n", "[nope]\n", "[train]\nepochs = 1\nfoo = 2\n"] {
            let err = RunConfig::from_toml(bad).unwrap_err();
            assert!(err.is_validation(), "{err}");
        }
    }

    #[test]
    fn invalid_values_are_rejected() {
        let mut cfg = RunConfig::default();
        cfg.train.batch_size = 0;
        assert!(cfg.validate().is_err());
        let mut cfg = RunConfig::default();
        cfg.model.mlp_hidden = 0;
        assert!(cfg.validate().is_err());
    }
}
