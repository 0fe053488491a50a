//! TOML run configuration. Every key is optional.

use std::path::Path;

use fontid_core::training::TrainConfig;
use serde::Deserialize;

#[derive(Clone, Debug, Default, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct Phase {
    pub lr0: Option<f64>,
    pub momentum: Option<f64>,
    pub weight_decay: Option<f64>,
    pub batch_size: Option<usize>,
    pub lr_drop_factor: Option<f64>,
    pub patience: Option<usize>,
    pub max_lr_drops: Option<usize>,
    pub max_epochs: Option<usize>,
    pub steps_per_epoch: Option<usize>,
}

impl Phase {
    pub fn apply(&self, base: TrainConfig, seed: u64) -> TrainConfig {
        TrainConfig {
            lr0: self.lr0.unwrap_or(base.lr0),
            momentum: self.momentum.unwrap_or(base.momentum),
            weight_decay: self.weight_decay.unwrap_or(base.weight_decay),
            batch_size: self.batch_size.unwrap_or(base.batch_size),
            lr_drop_factor: self.lr_drop_factor.unwrap_or(base.lr_drop_factor),
            patience: self.patience.unwrap_or(base.patience),
            max_lr_drops: self.max_lr_drops.unwrap_or(base.max_lr_drops),
            max_epochs: self.max_epochs.unwrap_or(base.max_epochs),
            steps_per_epoch: self.steps_per_epoch.unwrap_or(base.steps_per_epoch),
            seed,
            rank_constraint: base.rank_constraint,
        }
    }
}

#[derive(Clone, Debug, Default, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Supervised training of C_s.
    pub train: Phase,
    /// Auto-encoder pretraining.
    pub scae: Phase,
    /// Rank-constrained fine-tuning before a lossless export.
    pub rank_ft: Phase,
    /// Lines per class in the generated held-out reconstruction sets.
    pub holdout_per_class: Option<usize>,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, String> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        toml::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
    }

    pub fn train(&self, seed: u64) -> TrainConfig {
        self.train.apply(TrainConfig::default(), seed)
    }

    pub fn scae(&self, seed: u64) -> TrainConfig {
        self.scae.apply(
            TrainConfig {
                max_epochs: 10,
                ..TrainConfig::default()
            },
            seed,
        )
    }

    pub fn rank_ft(&self, seed: u64) -> TrainConfig {
        self.rank_ft.apply(
            TrainConfig {
                max_epochs: 5,
                lr0: 0.001,
                ..TrainConfig::default()
            },
            seed,
        )
    }
}
