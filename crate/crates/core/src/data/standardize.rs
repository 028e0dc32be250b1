use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use super::window::MotionDataset;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Per-feature z-scoring parameters pooled over frames and training trials.
/// The standard deviation uses the population convention.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StandardizationStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

pub fn fit_stats<'a, I>(train_trials: I) -> Result<StandardizationStats>
where
    I: IntoIterator<Item = &'a Array2<f64>>,
{
    let trials: Vec<&Array2<f64>> = train_trials.into_iter().collect();
    let Some(first) = trials.first() else {
        return Err(Error::Contract("cannot fit standardization on zero trials".into()));
    };
    let d = first.ncols();
    let mut n = 0usize;
    let mut sum = Array1::<f64>::zeros(d);
    for t in &trials {
        if t.ncols() != d {
            return Err(Error::Contract("training trials differ in feature count".into()));
        }
        sum += &t.sum_axis(Axis(0));
        n += t.nrows();
    }
    let mean = sum / n as f64;
    let mut sq = Array1::<f64>::zeros(d);
    for t in &trials {
        for row in t.outer_iter() {
            let centered = &row - &mean;
            sq += &(&centered * &centered);
        }
    }
    let std = (sq / n as f64).mapv(f64::sqrt);
    if let Some(feature) = std.iter().position(|&s| !(s > 0.0)) {
        return Err(Error::ZeroVariance { feature });
    }
    Ok(StandardizationStats {
        mean: mean.to_vec(),
        std: std.to_vec(),
    })
}

impl StandardizationStats {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    fn check(&self, cols: usize) -> Result<()> {
        if cols != self.dim() {
            return Err(Error::Contract(format!(
                "stats cover {} features, data has {cols}",
                self.dim()
            )));
        }
        Ok(())
    }
}

/// z-scores one trial into the model's scalar type.
pub fn standardize_trial<S: Scalar>(x: ArrayView2<'_, f64>, stats: &StandardizationStats) -> Result<Array2<S>> {
    stats.check(x.ncols())?;
    Ok(Array2::from_shape_fn(x.dim(), |(t, c)| S::of((x[[t, c]] - stats.mean[c]) / stats.std[c])))
}

/// Back to original units.
pub fn unstandardize_trial<S: Scalar>(z: ArrayView2<'_, S>, stats: &StandardizationStats) -> Result<Array2<f64>> {
    stats.check(z.ncols())?;
    Ok(Array2::from_shape_fn(z.dim(), |(t, c)| z[[t, c]].to_f64_lossy() * stats.std[c] + stats.mean[c]))
}

pub fn standardize(dataset: &MotionDataset, stats: &StandardizationStats) -> Result<MotionDataset> {
    let trials = dataset
        .trials
        .iter()
        .map(|t| standardize_trial::<f64>(t.view(), stats))
        .collect::<Result<_>>()?;
    Ok(MotionDataset {
        trials,
        units: "standardized".into(),
        ..dataset.clone()
    })
}

pub fn unstandardize(dataset: &MotionDataset, stats: &StandardizationStats, units: &str) -> Result<MotionDataset> {
    let trials = dataset
        .trials
        .iter()
        .map(|t| unstandardize_trial(t.view(), stats))
        .collect::<Result<_>>()?;
    Ok(MotionDataset {
        trials,
        units: units.into(),
        ..dataset.clone()
    })
}
