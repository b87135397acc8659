use serde::{Deserialize, Serialize};

use super::moco::DEFAULT_QUEUE;
use crate::encoders::EncoderConfig;
use crate::error::{Error, Result};
use crate::tgsl::TgslConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub tolerance: f64,
    /// Weight of the contrastive term.
    pub alpha: f64,
    pub tau_cl: f64,
    pub queue_size: usize,
    pub momentum: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 200,
            lr: 1e-4,
            max_epochs: 50,
            patience: 3,
            tolerance: 1e-3,
            alpha: 0.5,
            tau_cl: 0.2,
            queue_size: DEFAULT_QUEUE,
            momentum: 0.999,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if !(self.lr > 0.0) {
            return bad(format!("learning rate {} must be positive", self.lr));
        }
        if self.max_epochs == 0 {
            return bad("max_epochs must be positive".into());
        }
        if self.patience == 0 {
            return bad("patience must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return bad(format!("alpha {} outside [0, 1]", self.alpha));
        }
        if !(self.tau_cl > 0.0) {
            return bad(format!("contrastive temperature {} must be positive", self.tau_cl));
        }
        if !(0.0..=1.0).contains(&self.momentum) {
            return bad(format!("momentum {} outside [0, 1]", self.momentum));
        }
        if !(self.tolerance >= 0.0) {
            return bad(format!("tolerance {} must be non-negative", self.tolerance));
        }
        Ok(())
    }
}

/// Encoder plus, unless running the encoder alone, the structure learner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub encoder: EncoderConfig,
    pub tgsl: Option<TgslConfig>,
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        if let Some(t) = &self.tgsl {
            t.validate()?;
            if t.edge_dim != self.encoder.edge_dim || t.node_dim != self.encoder.node_dim {
                return Err(Error::Config("encoder and structure learner feature dims differ".into()));
            }
        }
        Ok(())
    }
}
