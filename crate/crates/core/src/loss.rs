//! Reconstruction and KL objectives, and the batched end-to-end loss.

use ndarray::{Array2, ArrayView2};
use rand::{Rng, RngCore};
use rand_distr::StandardNormal;

use crate::autodiff::{Tape, Var};
use crate::dynamics::TimeGrid;
use crate::encoder::{segment_ranges, GaussianToken, InitialStateMode};
use crate::error::{Error, Result};
use crate::model::LatentOdeModel;
use crate::params::ParamSet;
use crate::scalar::Scalar;

/// Mean squared error over all frames and features.
pub fn recon_loss<S: Scalar>(predicted: ArrayView2<'_, S>, target: ArrayView2<'_, S>) -> Result<S> {
    if predicted.dim() != target.dim() {
        return Err(Error::Contract(format!(
            "reconstruction shapes differ: {:?} vs {:?}",
            predicted.dim(),
            target.dim()
        )));
    }
    if predicted.is_empty() {
        return Err(Error::Contract("reconstruction of an empty sequence".into()));
    }
    let sse: S = predicted.iter().zip(target.iter()).map(|(&a, &b)| (a - b) * (a - b)).sum();
    Ok(sse / S::of(predicted.len() as f64))
}

/// `KL(N(μ, diag σ²) ‖ N(0, I))` summed over latent dimensions, averaged over tokens.
pub fn kl_loss<S: Scalar>(tokens: &[GaussianToken<S>]) -> S {
    if tokens.is_empty() {
        return S::zero();
    }
    let half = S::of(0.5);
    let total: S = tokens
        .iter()
        .map(|tok| {
            tok.mean
                .iter()
                .zip(tok.log_var.iter())
                .map(|(&m, &lv)| half * (m * m + lv.exp() - S::one() - lv))
                .sum::<S>()
        })
        .sum();
    total / S::of(tokens.len() as f64)
}

/// Weights of the loss terms. `consistency` scales the optional penalty tying
/// token `k` to the flow at its segment midpoint; 0 disables it.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub recon: f64,
    pub kl: f64,
    pub consistency: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            recon: 1.0,
            kl: 1e-3,
            consistency: 0.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossBreakdown<S> {
    pub total: S,
    pub recon: S,
    pub kl: S,
    pub consistency: S,
}

#[derive(Clone, Copy, Debug)]
pub struct LossVars {
    pub total: Var,
    pub recon: Var,
    pub kl: Var,
    pub consistency: Option<Var>,
}

impl LossVars {
    pub fn read<S: Scalar>(&self, tape: &Tape<'_, S>) -> LossBreakdown<S> {
        LossBreakdown {
            total: tape.scalar(self.total),
            recon: tape.scalar(self.recon),
            kl: tape.scalar(self.kl),
            consistency: self.consistency.map_or(S::zero(), |c| tape.scalar(c)),
        }
    }
}

/// Records the loss of one mini-batch of standardized trials on `tape`.
///
/// Per trial: encode, draw `z₀` from token 0 (`mode`), flow over the full
/// grid, decode every frame. Reparameterization noise is drawn from `rng`
/// in trial order, `d` values per trial, before any dropout masks.
pub fn record_loss<S: Scalar>(
    tape: &mut Tape<'_, S>,
    model: &LatentOdeModel<S>,
    batch: &[ArrayView2<'_, S>],
    weights: LossWeights,
    mode: InitialStateMode,
    rng: &mut dyn RngCore,
) -> Result<LossVars> {
    let Some(first) = batch.first() else {
        return Err(Error::Contract("empty batch".into()));
    };
    let (t_len, features) = first.dim();
    if batch.iter().any(|x| x.dim() != (t_len, features)) {
        return Err(Error::Contract("batch trials must share one shape".into()));
    }
    let b_len = batch.len();
    let d = model.config().latent_dim();
    let n_tokens = model.config().encoder.n_tokens;

    let noise = match mode {
        InitialStateMode::Sample => Some(Array2::from_shape_fn((b_len, d), |_| S::of(rng.sample::<f64, _>(StandardNormal)))),
        InitialStateMode::Mean => None,
    };
    let dropout_active = model.config().encoder.dropout > 0.0;

    let mut means = Vec::with_capacity(b_len);
    let mut log_vars = Vec::with_capacity(b_len);
    for x in batch {
        let xv = tape.constant(x.to_owned());
        let enc = model
            .encoder()
            .forward(tape, xv, if dropout_active { Some(&mut *rng) } else { None })?;
        means.push(enc.means);
        log_vars.push(enc.log_vars);
    }

    // KL over every token of every trial.
    let all_means = tape.concat_rows(&means);
    let all_log_vars = tape.concat_rows(&log_vars);
    let mu_sq = tape.square(all_means);
    let var = tape.exp(all_log_vars);
    let kl = tape.add(mu_sq, var);
    let kl = tape.sub(kl, all_log_vars);
    let kl = tape.offset(kl, -S::one());
    let kl = tape.sum(kl);
    let kl = tape.scale(kl, S::of(0.5 / (b_len * n_tokens) as f64));

    // Initial states, B × d.
    let mu0 = means.iter().map(|&m| tape.slice_rows(m, 0..1)).collect::<Vec<_>>();
    let mu0 = tape.concat_rows(&mu0);
    let z0 = match noise {
        Some(eps) => {
            let lv0 = log_vars.iter().map(|&l| tape.slice_rows(l, 0..1)).collect::<Vec<_>>();
            let lv0 = tape.concat_rows(&lv0);
            let half = tape.scale(lv0, S::of(0.5));
            let std = tape.exp(half);
            let eps = tape.constant(eps);
            let shift = tape.mul(std, eps);
            tape.add(mu0, shift)
        }
        None => mu0,
    };

    let grid = TimeGrid::new(t_len)?;
    let states = model.field().integrate_on_tape(tape, z0, &grid)?;

    // Time-major stacking: row t·B + b is trial b at frame t.
    let stacked = tape.concat_rows(&states);
    let decoded = model.decoder().forward(tape, stacked);
    tape.ensure_finite(decoded, "decoder")?;
    let target = Array2::from_shape_fn((t_len * b_len, features), |(r, c)| batch[r % b_len][[r / b_len, c]]);
    let target = tape.constant(target);
    let diff = tape.sub(decoded, target);
    let sq = tape.square(diff);
    let recon = tape.mean(sq);

    let weighted_recon = tape.scale(recon, S::of(weights.recon));
    let weighted_kl = tape.scale(kl, S::of(weights.kl));
    let mut total = tape.add(weighted_recon, weighted_kl);

    let consistency = if weights.consistency > 0.0 {
        let segments = segment_ranges(t_len, n_tokens)?;
        let mut acc: Option<Var> = None;
        for (k, seg) in segments.iter().enumerate() {
            let mid = (seg.start + seg.end - 1) / 2;
            let tokens_k = means.iter().map(|&m| tape.slice_rows(m, k..k + 1)).collect::<Vec<_>>();
            let tokens_k = tape.concat_rows(&tokens_k);
            let diff = tape.sub(tokens_k, states[mid]);
            let sq = tape.square(diff);
            let s = tape.sum(sq);
            acc = Some(match acc {
                Some(a) => tape.add(a, s),
                None => s,
            });
        }
        let c = tape.scale(acc.expect("at least one token"), S::of(1.0 / (b_len * n_tokens) as f64));
        let weighted = tape.scale(c, S::of(weights.consistency));
        total = tape.add(total, weighted);
        Some(c)
    } else {
        None
    };

    Ok(LossVars {
        total,
        recon,
        kl,
        consistency,
    })
}

/// Loss and parameter gradients (in [`ParamSet`] order) for one batch.
pub fn loss_and_grads<S: Scalar>(
    model: &LatentOdeModel<S>,
    batch: &[ArrayView2<'_, S>],
    weights: LossWeights,
    mode: InitialStateMode,
    rng: &mut dyn RngCore,
) -> Result<(LossBreakdown<S>, Vec<Array2<S>>)> {
    let mut tape = Tape::with_params(&model.params);
    let vars = record_loss(&mut tape, model, batch, weights, mode, rng)?;
    let grads = tape.backward(vars.total);
    Ok((vars.read(&tape), grads.param_grads(&model.params)))
}

/// Loss value only.
pub fn total_loss<S: Scalar>(
    model: &LatentOdeModel<S>,
    batch: &[ArrayView2<'_, S>],
    weights: LossWeights,
    mode: InitialStateMode,
    rng: &mut dyn RngCore,
) -> Result<LossBreakdown<S>> {
    let mut tape = Tape::frozen(&model.params);
    let vars = record_loss(&mut tape, model, batch, weights, mode, rng)?;
    Ok(vars.read(&tape))
}

/// Squared L2 norm of a gradient list.
pub fn grad_norm_sq<S: Scalar>(grads: &[Array2<S>]) -> S {
    grads.iter().map(|g| g.iter().map(|&v| v * v).sum::<S>()).sum()
}

/// Same layout, all zeros.
pub fn zero_grads<S: Scalar>(params: &ParamSet<S>) -> Vec<Array2<S>> {
    params.iter().map(|(_, p)| Array2::zeros(p.dim())).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn recon_examples() {
        let x = array![[0.0, 0.0], [0.0, 0.0]];
        assert_eq!(recon_loss(x.view(), x.view()).unwrap(), 0.0);
        let off = x.mapv(|v| v + 1.0);
        assert_eq!(recon_loss(off.view(), x.view()).unwrap(), 1.0);
        let y = array![[1.0, 0.0], [0.0, 2.0]];
        assert_eq!(recon_loss(y.view(), x.view()).unwrap(), 1.25);
        let bad = array![[1.0, 2.0, 3.0]];
        assert!(recon_loss(bad.view(), x.view()).is_err());
    }

    fn token(mean: Vec<f64>, log_var: Vec<f64>) -> GaussianToken<f64> {
        GaussianToken {
            mean: mean.into(),
            log_var: log_var.into(),
            token_index: 0,
            segment_span: 0..1,
        }
    }

    #[test]
    fn kl_examples() {
        assert_eq!(kl_loss(&[token(vec![0.0, 0.0], vec![0.0, 0.0])]), 0.0);
        assert_eq!(kl_loss(&[token(vec![2.0], vec![0.0])]), 2.0);
        // averaged over tokens
        assert_eq!(kl_loss(&[token(vec![2.0], vec![0.0]), token(vec![0.0], vec![0.0])]), 1.0);
    }
}
