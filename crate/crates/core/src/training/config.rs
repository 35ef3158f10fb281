use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Auxiliary anti-forgetting term added to cross-entropy in stage 1.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AuxLoss {
    /// Plain replay.
    #[default]
    None,
    /// Soft-target distillation on the old classes' logits (LwF style).
    LogitDistill {
        #[serde(default = "default_temperature")]
        temperature: f64,
    },
    /// Cosine feature distillation with an adaptive weight (LUCIR style).
    FeatureDistill {
        #[serde(default = "default_lambda_base")]
        lambda_base: f64,
    },
}

fn default_temperature() -> f64 {
    2.0
}

fn default_lambda_base() -> f64 {
    5.0
}

impl AuxLoss {
    pub fn name(&self) -> &'static str {
        match self {
            AuxLoss::None => "none",
            AuxLoss::LogitDistill { .. } => "logit_distill",
            AuxLoss::FeatureDistill { .. } => "feature_distill",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs_stage1: usize,
    pub epochs_stage2: usize,
    pub lr_stage1: f64,
    /// Epochs at which the stage-1 rate is divided by 10.
    pub milestones: Vec<usize>,
    pub lr_stage2: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub weight_decay: f64,
    /// Filled from the experiment's strategy.
    #[serde(skip)]
    pub aux: AuxLoss,
    /// Filled per run from the master seed.
    #[serde(skip)]
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs_stage1: 60,
            epochs_stage2: 30,
            lr_stage1: 0.1,
            milestones: vec![40, 50],
            lr_stage2: 0.1,
            momentum: 0.9,
            batch_size: 32,
            weight_decay: 0.0,
            aux: AuxLoss::None,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Stage-1 learning rate at `epoch` (0-based).
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let drops = self.milestones.iter().filter(|&&m| m <= epoch).count();
        self.lr_stage1 / 10f64.powi(drops as i32)
    }

    /// Returns the offending field and a message.
    pub fn check(&self) -> std::result::Result<(), (&'static str, String)> {
        if self.batch_size == 0 {
            return Err(("batch_size", "must be at least 1".into()));
        }
        if !self.milestones.windows(2).all(|w| w[0] < w[1]) {
            return Err(("milestones", "must be strictly increasing".into()));
        }
        if self.milestones.last().is_some_and(|&m| m >= self.epochs_stage1) {
            return Err(("milestones", "must be below epochs_stage1".into()));
        }
        for (name, v) in [
            ("lr_stage1", self.lr_stage1),
            ("lr_stage2", self.lr_stage2),
            ("momentum", self.momentum),
            ("weight_decay", self.weight_decay),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err((name, format!("must be a finite non-negative number, got {v}")));
            }
        }
        match self.aux {
            AuxLoss::LogitDistill { temperature } if !(temperature > 0.0 && temperature.is_finite()) => {
                Err(("temperature", format!("must be positive, got {temperature}")))
            }
            AuxLoss::FeatureDistill { lambda_base } if !(lambda_base >= 0.0 && lambda_base.is_finite()) => {
                Err(("lambda_base", format!("must be non-negative, got {lambda_base}")))
            }
            _ => Ok(()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.check()
            .map_err(|(field, msg)| Error::Parameter(format!("{field}: {msg}")))
    }
}
