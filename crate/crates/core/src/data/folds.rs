use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Cross-validation split of a participant's trials.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldAssignment {
    pub n_folds: usize,
    pub fold_of_trial: Vec<usize>,
    pub seed: u64,
}

/// Seeded shuffle followed by round-robin dealing, so fold sizes differ by at most one.
pub fn make_folds(n_trials: usize, n_folds: usize, seed: u64) -> Result<FoldAssignment> {
    if n_folds < 2 {
        return Err(Error::Config(format!("need at least 2 folds, got {n_folds}")));
    }
    if n_trials < n_folds {
        return Err(Error::Config(format!("{n_trials} trials cannot fill {n_folds} folds")));
    }
    let mut order: Vec<usize> = (0..n_trials).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut fold_of_trial = vec![0; n_trials];
    for (pos, &trial) in order.iter().enumerate() {
        fold_of_trial[trial] = pos % n_folds;
    }
    Ok(FoldAssignment {
        n_folds,
        fold_of_trial,
        seed,
    })
}

impl FoldAssignment {
    pub fn n_trials(&self) -> usize {
        self.fold_of_trial.len()
    }

    pub fn test_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.n_trials()).filter(|&i| self.fold_of_trial[i] == fold).collect()
    }

    pub fn train_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.n_trials()).filter(|&i| self.fold_of_trial[i] != fold).collect()
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.n_folds];
        for &f in &self.fold_of_trial {
            sizes[f] += 1;
        }
        sizes
    }

    pub fn check_fold(&self, fold: usize) -> Result<()> {
        if fold >= self.n_folds {
            return Err(Error::Config(format!("fold {fold} out of range 0..{}", self.n_folds)));
        }
        Ok(())
    }
}
