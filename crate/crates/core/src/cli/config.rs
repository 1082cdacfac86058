use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learning::{canonical_json, AdamConfig, LossWeights};
use crate::observer::ObserverConfig;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingConfig {
    pub epochs: u64,
    pub batch_size: usize,
}

/// Sample counts and optional dataset files; paths given on the command line
/// take precedence.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test: Option<String>,
    pub n_train: usize,
    #[serde(default)]
    pub n_val: usize,
    pub n_test: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ObserverConfig,
    pub loss: LossWeights,
    pub optimizer: AdamConfig,
    pub training: TrainingConfig,
    pub data: DataConfig,
    pub seed: u64,
}

/// Built-in configurations by name.
pub const PRESETS: &[(&str, &str)] = &[
    ("taxibj", include_str!("../../presets/taxibj.json")),
    ("mnist", include_str!("../../presets/mnist.json")),
    ("cikm", include_str!("../../presets/cikm.json")),
    ("taxibj-desk", include_str!("../../presets/taxibj-desk.json")),
    ("mnist-desk", include_str!("../../presets/mnist-desk.json")),
    ("cikm-desk", include_str!("../../presets/cikm-desk.json")),
];

impl ExperimentConfig {
    pub fn from_json(s: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn preset(name: &str) -> Result<Self> {
        let (_, body) = PRESETS
            .iter()
            .find(|(n, _)| *n == name)
            .ok_or_else(|| Error::Config(format!("no preset named {name}")))?;
        Self::from_json(body)
    }

    /// A preset name or a path to a JSON file.
    pub fn resolve(spec: &str) -> Result<Self> {
        if PRESETS.iter().any(|(n, _)| *n == spec) {
            return Self::preset(spec);
        }
        let path = Path::new(spec);
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&s)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.loss.validate()?;
        self.optimizer.validate()?;
        if self.training.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        Ok(())
    }

    /// Sorted-key compact JSON, the form stored in checkpoints and hashed in reports.
    pub fn canonical(&self) -> Result<String> {
        canonical_json(self)
    }
}
