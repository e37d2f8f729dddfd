use std::fmt;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::discriminators::DiscriminatorConfig;
use crate::error::{Error, Result};
use crate::losses::LossWeights;
use crate::metrics::MetricsConfig;
use crate::par_subnet::ParConfig;
use crate::tsie::{DqConfig, TsieConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Par,
    Pugan,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Par => "par",
            Stage::Pugan => "pugan",
        })
    }
}

/// Architecture of every learned module.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub par: ParConfig,
    pub tsie: TsieConfig,
    pub discriminator: DiscriminatorConfig,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.par.validate()?;
        self.tsie.validate()?;
        self.discriminator.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub stage: Stage,
    /// Epochs per run; for the parameter estimator, epochs per phase.
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub lr_decay_every: usize,
    pub lr_decay_factor: f64,
    pub adam_betas: (f64, f64),
    pub seed: u64,
    pub loss_weights: LossWeights,
    pub dq_alpha: f64,
    pub image_size: usize,
    pub model: ModelConfig,
    pub metrics: MetricsConfig,
    pub data_dir: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
}

impl TrainConfig {
    /// Parameter-estimator pretraining: 60 epochs per phase, batch 4, fixed
    /// learning rate 1e-4.
    pub fn par_defaults() -> Self {
        Self {
            stage: Stage::Par,
            epochs: 60,
            batch_size: 4,
            lr: 1e-4,
            lr_decay_factor: 1.0,
            ..Self::pugan_defaults()
        }
    }

    /// Adversarial training: 200 epochs, batch 16, learning rate 1e-3
    /// divided by 10 every 50 epochs, 256x256 inputs.
    pub fn pugan_defaults() -> Self {
        Self {
            stage: Stage::Pugan,
            epochs: 200,
            batch_size: 16,
            lr: 1e-3,
            lr_decay_every: 50,
            lr_decay_factor: 0.1,
            adam_betas: (0.5, 0.999),
            seed: 0,
            loss_weights: LossWeights::default(),
            dq_alpha: DqConfig::default().alpha,
            image_size: 256,
            model: ModelConfig::default(),
            metrics: MetricsConfig::default(),
            data_dir: None,
            out_dir: None,
        }
    }

    pub fn defaults_for(stage: Stage) -> Self {
        match stage {
            Stage::Par => Self::par_defaults(),
            Stage::Pugan => Self::pugan_defaults(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.epochs == 0 {
            return fail("epochs must be positive".into());
        }
        if self.batch_size == 0 {
            return fail("batch_size must be positive".into());
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return fail(format!("lr must be positive, got {}", self.lr));
        }
        if self.lr_decay_every == 0 {
            return fail("lr_decay_every must be positive".into());
        }
        if !(self.lr_decay_factor > 0.0 && self.lr_decay_factor <= 1.0) {
            return fail(format!("lr_decay_factor must be in (0, 1], got {}", self.lr_decay_factor));
        }
        let (b1, b2) = self.adam_betas;
        if !((0.0..1.0).contains(&b1) && (0.0..1.0).contains(&b2)) {
            return fail(format!("adam betas must be in [0, 1), got ({b1}, {b2})"));
        }
        if self.image_size == 0 || self.image_size % 32 != 0 {
            return fail(format!("image_size must be a positive multiple of 32, got {}", self.image_size));
        }
        self.loss_weights.validate()?;
        self.dq()?;
        self.model.validate()?;
        self.metrics.validate()
    }

    pub fn dq(&self) -> Result<DqConfig> {
        DqConfig::new(self.dq_alpha)
    }

    pub fn require_stage(&self, stage: Stage) -> Result<()> {
        if self.stage != stage {
            return Err(Error::Config(format!("config is for stage `{}`, expected `{stage}`", self.stage)));
        }
        Ok(())
    }
}

/// `lr * factor^floor(epoch / every)`, with `epoch` counted from 0.
pub fn lr_at(epoch: usize, cfg: &TrainConfig) -> f64 {
    let steps = epoch / cfg.lr_decay_every.max(1);
    cfg.lr * cfg.lr_decay_factor.powi(steps.min(i32::MAX as usize) as i32)
}
