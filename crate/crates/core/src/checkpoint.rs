//! Trained-fold checkpoints: configuration, seed, standardization statistics,
//! validation metrics and every parameter tensor in one JSON document.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::io::{read_text, write_text};
use crate::data::StandardizationStats;
use crate::error::{Error, Result};
use crate::evaluation::EvalReport;
use crate::model::{LatentOdeModel, ModelConfig};
use crate::params::{ParamSet, TensorRecord};
use crate::scalar::Scalar;
use crate::train::{FoldModel, TrainConfig};

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

impl Precision {
    pub fn of<S: Scalar>() -> Self {
        if std::mem::size_of::<S>() == 4 {
            Precision::F32
        } else {
            Precision::F64
        }
    }
}

/// Held-out metrics recorded when the checkpoint was written.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationMetrics {
    pub overall_rmse: f64,
    pub late_rmse: f64,
    pub mean_r2_full: Option<f64>,
    pub mean_r2_latter_half: Option<f64>,
}

impl From<&EvalReport> for ValidationMetrics {
    fn from(r: &EvalReport) -> Self {
        ValidationMetrics {
            overall_rmse: r.model.overall_rmse,
            late_rmse: r.model.late_rmse,
            mean_r2_full: r.model.mean_r2_full,
            mean_r2_latter_half: r.model.mean_r2_latter_half,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub precision: Precision,
    pub participant_id: String,
    pub fold_id: usize,
    pub n_folds: usize,
    pub seed: u64,
    pub n_frames: usize,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub stats: StandardizationStats,
    pub validation: Option<ValidationMetrics>,
    pub tensors: Vec<TensorRecord>,
}

impl Checkpoint {
    pub fn from_fold<S: Scalar>(fold: &FoldModel<S>, participant_id: &str, n_frames: usize, validation: Option<ValidationMetrics>) -> Self {
        Checkpoint {
            format_version: CHECKPOINT_FORMAT_VERSION,
            precision: Precision::of::<S>(),
            participant_id: participant_id.to_owned(),
            fold_id: fold.fold_id,
            n_folds: fold.n_folds,
            seed: fold.seed,
            n_frames,
            model: fold.model.config().clone(),
            train: fold.train_config.clone(),
            stats: fold.stats.clone(),
            validation,
            tensors: fold.model.params.to_records(),
        }
    }

    /// Rebuilds the model in precision `S`, whatever precision it was saved from.
    pub fn to_model<S: Scalar>(&self) -> Result<LatentOdeModel<S>> {
        let params = ParamSet::<S>::from_records(&self.tensors)?;
        LatentOdeModel::from_params(&self.model, params)
    }

    pub fn to_fold<S: Scalar>(&self) -> Result<FoldModel<S>> {
        Ok(FoldModel {
            model: self.to_model()?,
            stats: self.stats.clone(),
            fold_id: self.fold_id,
            n_folds: self.n_folds,
            seed: self.seed,
            train_config: self.train.clone(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_text(path, &serde_json::to_string(self)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ckpt: Checkpoint = serde_json::from_str(&read_text(path)?)?;
        if ckpt.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(Error::format(
                "checkpoint",
                format!("unsupported format version {}", ckpt.format_version),
            ));
        }
        if ckpt.stats.dim() != ckpt.model.feature_dim() {
            return Err(Error::format("checkpoint", "standardization statistics do not match the model"));
        }
        Ok(ckpt)
    }
}
