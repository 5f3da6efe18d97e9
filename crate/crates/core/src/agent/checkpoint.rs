//! Versioned JSON checkpoints of a trained policy.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::features::{feature_layout, Featurizer};
use super::qnet::QNet;
use super::trainer::TrainerConfig;

pub const CHECKPOINT_FORMAT: &str = "phasebranch-qnet";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Network parameters (row-major), the feature layout they expect, the
/// featurizer's split scale and the configuration that produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub layout: Vec<String>,
    pub dims: Vec<usize>,
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
    pub split_scale: f64,
    pub steps: u64,
    pub config: TrainerConfig,
}

impl Checkpoint {
    pub fn new(qnet: &QNet, featurizer: &Featurizer, config: &TrainerConfig, steps: u64) -> Self {
        Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            layout: feature_layout(),
            dims: qnet.dims().to_vec(),
            weights: qnet.weights().to_vec(),
            biases: qnet.biases().to_vec(),
            split_scale: featurizer.split_scale,
            steps,
            config: config.clone(),
        }
    }

    pub fn qnet(&self) -> Result<QNet> {
        QNet::from_parts(self.dims.clone(), self.weights.clone(), self.biases.clone())
            .map_err(|e| Error::Checkpoint(e.to_string()))
    }

    /// Featurizer for evaluation: the stored scale, no longer updated.
    pub fn featurizer(&self) -> Featurizer {
        Featurizer::frozen(self.split_scale)
    }

    pub fn to_text(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let c: Checkpoint = serde_json::from_str(text)?;
        if c.format != CHECKPOINT_FORMAT {
            return Err(Error::Checkpoint(format!("unknown format `{}`", c.format)));
        }
        if c.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported version {}",
                c.version
            )));
        }
        if c.layout != feature_layout() {
            return Err(Error::Checkpoint(
                "feature layout does not match this featurizer".into(),
            ));
        }
        if c.dims.first() != Some(&c.layout.len()) {
            return Err(Error::Checkpoint(
                "input width does not match the layout".into(),
            ));
        }
        c.qnet()?;
        Ok(c)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Checkpoint::from_text(&std::fs::read_to_string(path)?)
    }
}
