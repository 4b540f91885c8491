//! Desk-scale training: AdamW with per-group learning rates and a stepped
//! schedule, a synthetic shapes dataset, the training loop and
//! checkpoints.

pub mod checkpoint;
pub mod data;
mod optim;
mod run;

pub use checkpoint::{load_checkpoint, save_checkpoint, write_loss_csv, ManifestEntry};
pub use data::{gen_dataset, make_batch, ShapeClass, SyntheticScene};
pub use optim::AdamW;
pub use run::{evaluate, train, StepLog, TrainReport};

use crate::backbone::{BackboneSpec, TinySpec};
use crate::cores::CoreSpec;
use crate::error::{Error, Result};
use crate::head::HeadSpec;
use crate::model::ModelSpec;
use serde::{Deserialize, Serialize};

/// Learning-rate multiplier of the toy overfitting runs.
pub const TOY_LR_SCALE: f64 = 10.0;

/// Steps of the toy overfitting budget: 125 epochs of 4 batches.
pub const TOY_EPOCHS: usize = 125;

/// Classes of the synthetic scenes.
pub const TOY_CLASSES: usize = 3;

/// Desk-scale detector around `core`: tiny backbone, narrow pyramid and a
/// single-hidden-layer head over the synthetic classes.
pub fn toy_model(core: CoreSpec) -> ModelSpec {
    ModelSpec {
        backbone: BackboneSpec::tiny(TinySpec {
            widths: [32, 64, 128],
            blocks: 1,
            stem_width: 16,
            norm_groups: 8,
            ..TinySpec::default()
        }),
        core: core.with_sizes(64, 16, 8),
        head: HeadSpec::default().with_classes(TOY_CLASSES),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr_backbone: f64,
    pub lr_rest: f64,
    pub weight_decay: f64,
    /// Epoch indices from which the learning rates are multiplied by
    /// another `drop_factor`.
    pub drop_epochs: Vec<usize>,
    pub drop_factor: f64,
    pub batch_size: usize,
    pub seed: u64,
    /// Synthetic scenes to train on.
    pub scenes: usize,
    pub image_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 36,
            lr_backbone: 1e-5,
            lr_rest: 1e-4,
            weight_decay: 1e-4,
            drop_epochs: vec![27, 33],
            drop_factor: 0.1,
            batch_size: 2,
            seed: 0,
            scenes: 8,
            image_size: 128,
        }
    }
}

impl TrainConfig {
    /// Drops at 75% and 11/12 of `epochs`, matching the 36-epoch schedule's
    /// proportions.
    pub fn scaled_drops(epochs: usize) -> Vec<usize> {
        let mut d: Vec<usize> = [0.75, 11.0 / 12.0]
            .iter()
            .map(|f| (f * epochs as f64).round() as usize)
            .filter(|&e| e > 0 && e < epochs)
            .collect();
        d.dedup();
        d
    }

    /// Toy overfitting setup: both learning rates scaled by `scale`.
    pub fn toy(epochs: usize, scale: f64) -> Self {
        TrainConfig {
            epochs,
            lr_backbone: 1e-5 * scale,
            lr_rest: 1e-4 * scale,
            drop_epochs: Self::scaled_drops(epochs),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.scenes == 0 {
            return Err(Error::config("epochs, batch size and scene count must be positive"));
        }
        if !self.drop_epochs.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::config("drop epochs must be strictly increasing"));
        }
        if self.drop_epochs.last().is_some_and(|&d| d >= self.epochs) {
            return Err(Error::config("drop epochs must precede the last epoch"));
        }
        if self.image_size == 0 || !self.image_size.is_multiple_of(32) {
            return Err(Error::config("image size must be a positive multiple of 32"));
        }
        if !(self.lr_backbone >= 0.0 && self.lr_rest >= 0.0 && self.weight_decay >= 0.0) {
            return Err(Error::config("learning rates and weight decay must be non-negative"));
        }
        Ok(())
    }

    pub fn steps_per_epoch(&self) -> usize {
        self.scenes.div_ceil(self.batch_size)
    }

    pub fn total_steps(&self) -> usize {
        self.epochs * self.steps_per_epoch()
    }
}

/// `(backbone, rest)` learning rates in effect during `epoch`.
pub fn lr_at(cfg: &TrainConfig, epoch: usize) -> (f64, f64) {
    let drops = cfg.drop_epochs.iter().filter(|&&d| d <= epoch).count();
    let f = cfg.drop_factor.powi(drops as i32);
    (cfg.lr_backbone * f, cfg.lr_rest * f)
}
