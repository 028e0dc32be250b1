//! Per-fold training loop.

use std::time::Instant;

use ndarray::{Array2, ArrayView2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{fit_stats, standardize_trial, FoldAssignment, MotionDataset, StandardizationStats};
use crate::encoder::InitialStateMode;
use crate::error::{Error, Result};
use crate::loss::{grad_norm_sq, loss_and_grads, LossWeights};
use crate::model::{LatentOdeModel, ModelConfig};
use crate::optim::{Adam, AdamConfig};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lambda_recon: f64,
    pub lambda_kl: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    /// Draw `z₀` from token 0 during training; the mean is used otherwise.
    pub sample_initial_state: bool,
    pub lambda_consistency: f64,
    pub weight_decay: f64,
    /// Rescale gradients whose global L2 norm exceeds this value.
    pub grad_clip_norm: Option<f64>,
    /// Multiplicative learning-rate factor applied after every epoch.
    pub lr_decay: Option<f64>,
    /// Stop once the epoch loss has not improved for this many epochs.
    pub early_stopping_patience: Option<usize>,
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda_recon: 1.0,
            lambda_kl: 1e-3,
            learning_rate: 1e-4,
            batch_size: 32,
            epochs: 1500,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
            sample_initial_state: true,
            lambda_consistency: 0.0,
            weight_decay: 0.0,
            grad_clip_norm: None,
            lr_decay: None,
            early_stopping_patience: None,
            log_every: 50,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(format!("train.{what}")));
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be finite and non-negative");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("Adam betas must lie in [0, 1)");
        }
        if !(self.adam_eps > 0.0) {
            return bad("adam_eps must be positive");
        }
        if self.lambda_recon < 0.0 || self.lambda_kl < 0.0 || self.lambda_consistency < 0.0 || self.weight_decay < 0.0 {
            return bad("loss weights and weight_decay must be non-negative");
        }
        if let Some(c) = self.grad_clip_norm {
            if !(c > 0.0) {
                return bad("grad_clip_norm must be positive");
            }
        }
        Ok(())
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights {
            recon: self.lambda_recon,
            kl: self.lambda_kl,
            consistency: self.lambda_consistency,
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.adam_eps,
            weight_decay: self.weight_decay,
        }
    }

    pub fn initial_state_mode(&self) -> InitialStateMode {
        if self.sample_initial_state {
            InitialStateMode::Sample
        } else {
            InitialStateMode::Mean
        }
    }
}

/// Trial-weighted epoch means of the loss terms.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub total: f64,
    pub recon: f64,
    pub kl: f64,
    pub consistency: f64,
    pub learning_rate: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    pub stopped_early: bool,
}

impl TrainHistory {
    pub fn last(&self) -> Option<&EpochRecord> {
        self.epochs.last()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,total,recon,kl,consistency,learning_rate,seconds\n");
        for r in &self.epochs {
            out.push_str(&format!(
                "{},{:e},{:e},{:e},{:e},{:e},{:.3}\n",
                r.epoch, r.total, r.recon, r.kl, r.consistency, r.learning_rate, r.seconds
            ));
        }
        out
    }
}

/// A model trained on one fold, with the statistics it expects its inputs in.
#[derive(Clone, Debug)]
pub struct FoldModel<S> {
    pub model: LatentOdeModel<S>,
    pub stats: StandardizationStats,
    pub fold_id: usize,
    pub n_folds: usize,
    pub seed: u64,
    pub train_config: TrainConfig,
}

/// RNGs for one fold: parameter init and training draws use separate streams.
pub fn fold_rngs(seed: u64, fold_id: usize) -> (ChaCha8Rng, ChaCha8Rng) {
    let mut init = ChaCha8Rng::seed_from_u64(seed);
    init.set_stream(2 * fold_id as u64);
    let mut train = ChaCha8Rng::seed_from_u64(seed);
    train.set_stream(2 * fold_id as u64 + 1);
    (init, train)
}

/// Trains a fresh model on the training split of `fold_id`.
///
/// Standardization statistics come from the training trials only.
pub fn train_fold<S: Scalar>(
    dataset: &MotionDataset,
    folds: &FoldAssignment,
    fold_id: usize,
    model_config: &ModelConfig,
    config: &TrainConfig,
) -> Result<(FoldModel<S>, TrainHistory)> {
    train_fold_with(dataset, folds, fold_id, model_config, config, &mut |_| {})
}

/// [`train_fold`] with a callback after every epoch.
pub fn train_fold_with<S: Scalar>(
    dataset: &MotionDataset,
    folds: &FoldAssignment,
    fold_id: usize,
    model_config: &ModelConfig,
    config: &TrainConfig,
    on_epoch: &mut dyn FnMut(&EpochRecord),
) -> Result<(FoldModel<S>, TrainHistory)> {
    config.validate()?;
    model_config.validate()?;
    dataset.validate()?;
    folds.check_fold(fold_id)?;
    if folds.n_trials() != dataset.len() {
        return Err(Error::Contract(format!(
            "fold assignment covers {} trials, dataset has {}",
            folds.n_trials(),
            dataset.len()
        )));
    }
    if dataset.feature_dim() != model_config.feature_dim() {
        return Err(Error::Contract(format!(
            "dataset has {} features, model expects {}",
            dataset.feature_dim(),
            model_config.feature_dim()
        )));
    }
    let train_idx = folds.train_indices(fold_id);
    let stats = fit_stats(train_idx.iter().map(|&i| &dataset.trials[i]))?;
    let train: Vec<Array2<S>> = train_idx
        .iter()
        .map(|&i| standardize_trial(dataset.trials[i].view(), &stats))
        .collect::<Result<_>>()?;

    let (mut init_rng, mut rng) = fold_rngs(config.seed, fold_id);
    let mut model = LatentOdeModel::<S>::new(model_config, &mut init_rng)?;
    let mut adam = Adam::new(config.adam(), &model.params);
    let weights = config.loss_weights();
    let mode = config.initial_state_mode();

    let mut history = TrainHistory::default();
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut lr = config.learning_rate;
    let mut best = f64::INFINITY;
    let mut since_best = 0usize;

    for epoch in 0..config.epochs {
        let started = Instant::now();
        order.shuffle(&mut rng);
        let mut sums = [0.0f64; 4];
        for (step, chunk) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<ArrayView2<'_, S>> = chunk.iter().map(|&i| train[i].view()).collect();
            let diverged = |loss: f64| Error::Divergence { epoch, step, loss };
            let (loss, mut grads) = match loss_and_grads(&model, &batch, weights, mode, &mut rng) {
                Ok(v) => v,
                Err(Error::Numeric { .. }) | Err(Error::Integration { .. }) => return Err(diverged(f64::NAN)),
                Err(e) => return Err(e),
            };
            let total = loss.total.to_f64_lossy();
            let norm_sq = grad_norm_sq(&grads).to_f64_lossy();
            if !total.is_finite() || !norm_sq.is_finite() {
                return Err(diverged(total));
            }
            if let Some(max_norm) = config.grad_clip_norm {
                let norm = norm_sq.sqrt();
                if norm > max_norm {
                    let factor = S::of(max_norm / norm);
                    grads.iter_mut().for_each(|g| g.mapv_inplace(|v| v * factor));
                }
            }
            adam.step(&mut model.params, &grads, lr);
            let n = batch.len() as f64;
            sums[0] += n * total;
            sums[1] += n * loss.recon.to_f64_lossy();
            sums[2] += n * loss.kl.to_f64_lossy();
            sums[3] += n * loss.consistency.to_f64_lossy();
        }
        let n = train.len() as f64;
        let record = EpochRecord {
            epoch,
            total: sums[0] / n,
            recon: sums[1] / n,
            kl: sums[2] / n,
            consistency: sums[3] / n,
            learning_rate: lr,
            seconds: started.elapsed().as_secs_f64(),
        };
        if config.log_every > 0 && (epoch % config.log_every == 0 || epoch + 1 == config.epochs) {
            log::info!(
                "fold {fold_id} epoch {epoch}: loss {:.5} (recon {:.5}, kl {:.4})",
                record.total,
                record.recon,
                record.kl
            );
        }
        on_epoch(&record);
        let total = record.total;
        history.epochs.push(record);
        if let Some(decay) = config.lr_decay {
            lr *= decay;
        }
        if let Some(patience) = config.early_stopping_patience {
            if total < best {
                best = total;
                since_best = 0;
            } else {
                since_best += 1;
                if since_best >= patience {
                    history.stopped_early = true;
                    break;
                }
            }
        }
    }

    Ok((
        FoldModel {
            model,
            stats,
            fold_id,
            n_folds: folds.n_folds,
            seed: config.seed,
            train_config: config.clone(),
        },
        history,
    ))
}
