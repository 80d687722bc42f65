//! Two-stage training, evaluation and guidance export.

mod checkpoint;
mod eval;
mod figures;
mod trainer;

pub use checkpoint::{AdamState, Checkpoint, EpochRecord, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use eval::{evaluate, Extractor};
pub use figures::{export_guidance_figures, FigureDenoiser, FigureSet, PANELS};
pub use trainer::{run_backbone_stage_with, run_stage, Prior, RunOptions, StageSpec};

use serde::{Deserialize, Serialize};

use crate::augment::StrategyName;
use crate::error::{Result, TseError};
use crate::metrics::LossWeights;

/// Upper bound on the number of epochs of any stage.
pub const EPOCH_CAP: usize = 150;
/// Epochs at the end of a run that use the faster decay.
pub const FINAL_DECAY_EPOCHS: usize = 20;
/// Last epoch of the slow decay phase.
pub const SLOW_DECAY_UNTIL: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    PretrainDenoiser,
    PretrainBackbone,
    JointFinetune,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::PretrainDenoiser => "pretrain_denoiser",
            Stage::PretrainBackbone => "pretrain_backbone",
            Stage::JointFinetune => "joint_finetune",
        }
    }

    /// Loss terms active in this stage.
    pub fn loss_weights(self) -> LossWeights {
        match self {
            Stage::PretrainDenoiser => LossWeights::denoiser_only(),
            Stage::PretrainBackbone => LossWeights::backbone_only(),
            Stage::JointFinetune => LossWeights::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainPlan {
    pub stage: Stage,
    pub strategy: StrategyName,
    pub lr0: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub grad_clip_l2: f64,
    pub seed: u64,
    pub freeze_denoiser: bool,
    /// Skip the denoiser entirely: guidance is the plain noisy interaction.
    pub identity_denoiser: bool,
}

impl TrainPlan {
    /// Plan with the stage's freeze flag and desk-scale defaults.
    pub fn new(stage: Stage, strategy: StrategyName, seed: u64) -> Self {
        Self {
            stage,
            strategy,
            lr0: 5e-4,
            epochs: 40,
            batch_size: 8,
            grad_clip_l2: 1.0,
            seed,
            freeze_denoiser: stage == Stage::PretrainBackbone,
            identity_denoiser: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.epochs > EPOCH_CAP {
            return Err(TseError::Config(format!("epochs must be in 1..={EPOCH_CAP}, got {}", self.epochs)));
        }
        if self.batch_size == 0 {
            return Err(TseError::Config("batch size must be at least 1".into()));
        }
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return Err(TseError::Config(format!("initial learning rate {} must be positive", self.lr0)));
        }
        if !(self.grad_clip_l2 > 0.0) {
            return Err(TseError::Config("gradient clip norm must be positive".into()));
        }
        let expected_freeze = match self.stage {
            Stage::PretrainDenoiser => false,
            Stage::PretrainBackbone => true,
            Stage::JointFinetune => false,
        };
        if self.freeze_denoiser != expected_freeze {
            return Err(TseError::Config(format!(
                "stage {} requires freeze_denoiser = {expected_freeze}",
                self.stage.as_str()
            )));
        }
        if self.identity_denoiser && self.stage != Stage::PretrainBackbone {
            return Err(TseError::Config(format!(
                "an identity denoiser has nothing to train in stage {}",
                self.stage.as_str()
            )));
        }
        Ok(())
    }
}

/// Step schedule: ×0.98 every two epochs up to epoch 100, ×0.9 every two
/// epochs over the final 20 epochs, constant in between. When a run is
/// shorter than 120 epochs the final phase starts 20 epochs before the end.
pub fn lr_at_epoch(plan: &TrainPlan, epoch: usize) -> Result<f64> {
    if epoch >= plan.epochs {
        return Err(TseError::InvalidInput(format!(
            "epoch {epoch} outside a {}-epoch plan",
            plan.epochs
        )));
    }
    let final_start = plan.epochs.saturating_sub(FINAL_DECAY_EPOCHS);
    let slow_until = SLOW_DECAY_UNTIL.min(final_start);
    let slow = (epoch.min(slow_until) / 2) as i32;
    let fast = (epoch.saturating_sub(final_start) / 2) as i32;
    Ok(plan.lr0 * 0.98f64.powi(slow) * 0.9f64.powi(fast))
}
