use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::goodness::GateConfig;
use crate::io::data::DatasetSpec;
use crate::losses::LossWeights;
use crate::model::ModelConfig;

use super::optim::AdamSettings;

/// Schedule, optimiser and mining settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSettings {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Multiplier on the learning rate for label embeddings.
    pub label_lr_scale: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub ema_decay: f64,
    pub hnm_k_first: usize,
    pub hnm_k_last: usize,
    /// Registered name of the candidate scorer used for hard-negative mining.
    pub hnm_scorer: String,
    /// Add the missing-gradient-compensation term to every block objective.
    pub mgc: bool,
    /// Recompute block `d`'s inputs from the already-updated earlier blocks.
    pub refresh_tokens: bool,
    /// Evaluate with the teacher instead of the live network.
    pub eval_teacher: bool,
    /// Run the locality audit every this many steps (0 disables).
    pub audit_every: usize,
    /// Std of Gaussian pixel jitter added to training batches (0 disables).
    pub jitter_std: f64,
}

impl Default for TrainSettings {
    fn default() -> Self {
        TrainSettings {
            epochs: 50,
            batch_size: 64,
            learning_rate: 3e-3,
            label_lr_scale: 1.0,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            ema_decay: 0.99,
            hnm_k_first: 8,
            hnm_k_last: 16,
            hnm_scorer: "summed".into(),
            mgc: false,
            refresh_tokens: false,
            eval_teacher: false,
            audit_every: 0,
            jitter_std: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub seed: u64,
    pub model: ModelConfig,
    pub loss: LossWeights,
    pub gate: GateConfig,
    pub train: TrainSettings,
    pub data: DatasetSpec,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.loss.validate()?;
        self.gate.validate()?;
        self.data.validate()?;
        let t = &self.train;
        if t.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if t.hnm_k_first == 0 || t.hnm_k_last == 0 {
            return Err(Error::Config("hnm_k_first and hnm_k_last must be at least 1".into()));
        }
        if t.batch_size < 2 {
            return Err(Error::Config("batch_size must be at least 2".into()));
        }
        if !(t.learning_rate >= 0.0) || !(0.0..1.0).contains(&t.adam_beta1) || !(0.0..1.0).contains(&t.adam_beta2) || !(t.adam_eps > 0.0) || !(t.label_lr_scale >= 0.0) {
            return Err(Error::Config("invalid optimiser settings".into()));
        }
        if !(0.0..=1.0).contains(&t.ema_decay) {
            return Err(Error::Config(format!("ema_decay must lie in [0, 1], got {}", t.ema_decay)));
        }
        if !(t.jitter_std >= 0.0) {
            return Err(Error::Config("jitter_std must be non-negative".into()));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamSettings {
        AdamSettings {
            lr: self.train.learning_rate,
            beta1: self.train.adam_beta1,
            beta2: self.train.adam_beta2,
            eps: self.train.adam_eps,
            label_lr_scale: self.train.label_lr_scale,
        }
    }
}
