//! Causal transformer encoder mapping a standardized motion sequence to `K`
//! Gaussian latent tokens.
//!
//! Frames are projected to `model_dim`, offset by a fixed sinusoidal
//! position code and passed through pre-norm self-attention blocks in which
//! frame `t` only attends to frames `0..=t`. The frame states are then mean
//! pooled over `K` contiguous segments and two linear heads produce the mean
//! and log-variance of every token. Token 0 summarises the first segment
//! only and seeds the latent dynamics.

use std::ops::Range;

use ndarray::{Array1, Array2, ArrayView2};
use rand::{Rng, RngCore};
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::nn::Linear;
use crate::params::{ParamId, ParamSet};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub input_dim: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub model_dim: usize,
    pub latent_dim: usize,
    pub n_tokens: usize,
    pub feedforward_dim: usize,
    pub dropout: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            input_dim: 45,
            n_layers: 3,
            n_heads: 8,
            model_dim: 256,
            latent_dim: 3,
            n_tokens: 12,
            feedforward_dim: 1024,
            dropout: 0.0,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_heads == 0 || self.model_dim % self.n_heads != 0 {
            return Err(Error::Config(format!(
                "model_dim {} must be divisible by n_heads {}",
                self.model_dim, self.n_heads
            )));
        }
        if self.n_tokens == 0 || self.latent_dim == 0 || self.input_dim == 0 || self.feedforward_dim == 0 {
            return Err(Error::Config("encoder dimensions and token count must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.model_dim / self.n_heads
    }
}

/// Posterior of one latent token.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianToken<S> {
    pub mean: Array1<S>,
    pub log_var: Array1<S>,
    pub token_index: usize,
    pub segment_span: Range<usize>,
}

/// How [`initial_state`] turns token 0 into `z₀`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitialStateMode {
    Sample,
    Mean,
}

/// `T × T` allow-mask: entry `(t, s)` is true iff `s <= t`.
pub fn causal_frame_mask(t: usize) -> Array2<bool> {
    Array2::from_shape_fn((t, t), |(r, c)| c <= r)
}

/// Splits `0..t` into `k` contiguous segments whose lengths differ by at
/// most one, longer segments first.
pub fn segment_ranges(t: usize, k: usize) -> Result<Vec<Range<usize>>> {
    if k == 0 || k > t {
        return Err(Error::Config(format!("cannot split {t} frames into {k} tokens")));
    }
    let base = t / k;
    let extra = t % k;
    let mut start = 0;
    Ok((0..k)
        .map(|i| {
            let len = base + usize::from(i < extra);
            let r = start..start + len;
            start += len;
            r
        })
        .collect())
}

/// Mean of `frame_states` rows over each of `k` segments.
pub fn segment_pool<S: Scalar>(frame_states: ArrayView2<'_, S>, k: usize) -> Result<Array2<S>> {
    let segments = segment_ranges(frame_states.nrows(), k)?;
    let mut tape = Tape::new();
    let x = tape.constant(frame_states.to_owned());
    let pooled = tape.segment_mean(x, &segments);
    Ok(tape.value(pooled).to_owned())
}

/// Fixed sinusoidal position code, `T × model_dim`.
pub fn sinusoidal_positions<S: Scalar>(t: usize, model_dim: usize) -> Array2<S> {
    Array2::from_shape_fn((t, model_dim), |(pos, i)| {
        let pair = (i / 2) as f64;
        let angle = pos as f64 / 10000f64.powf(2.0 * pair / model_dim as f64);
        S::of(if i % 2 == 0 { angle.sin() } else { angle.cos() })
    })
}

#[derive(Clone, Debug)]
struct Block {
    norm1_gain: ParamId,
    norm1_bias: ParamId,
    qkv: Linear,
    out: Linear,
    norm2_gain: ParamId,
    norm2_bias: ParamId,
    ff_in: Linear,
    ff_out: Linear,
}

/// Parameter layout of the encoder inside a [`ParamSet`].
#[derive(Clone, Debug)]
pub struct Encoder {
    config: EncoderConfig,
    input: Linear,
    blocks: Vec<Block>,
    final_gain: ParamId,
    final_bias: ParamId,
    mean_head: Linear,
    log_var_head: Linear,
}

/// Token posteriors as tape nodes, each `K × d`.
#[derive(Clone, Copy, Debug)]
pub struct EncodedVars {
    pub means: Var,
    pub log_vars: Var,
}

const LAYER_NORM_EPS: f64 = 1e-5;

impl Encoder {
    pub fn new<S: Scalar, R: Rng>(config: &EncoderConfig, params: &mut ParamSet<S>, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let dm = config.model_dim;
        let input = Linear::new(params, "encoder.input", config.input_dim, dm, rng);
        let blocks = (0..config.n_layers)
            .map(|l| {
                let p = format!("encoder.layer{l}");
                Block {
                    norm1_gain: params.insert_filled(format!("{p}.norm1.gain"), 1, dm, S::one()),
                    norm1_bias: params.insert_zeros(format!("{p}.norm1.bias"), 1, dm),
                    qkv: Linear::new(params, &format!("{p}.attn.qkv"), dm, 3 * dm, rng),
                    out: Linear::new(params, &format!("{p}.attn.out"), dm, dm, rng),
                    norm2_gain: params.insert_filled(format!("{p}.norm2.gain"), 1, dm, S::one()),
                    norm2_bias: params.insert_zeros(format!("{p}.norm2.bias"), 1, dm),
                    ff_in: Linear::new(params, &format!("{p}.ff.in"), dm, config.feedforward_dim, rng),
                    ff_out: Linear::new(params, &format!("{p}.ff.out"), config.feedforward_dim, dm, rng),
                }
            })
            .collect();
        let final_gain = params.insert_filled("encoder.final_norm.gain", 1, dm, S::one());
        let final_bias = params.insert_zeros("encoder.final_norm.bias", 1, dm);
        let mean_head = Linear::new(params, "encoder.head.mean", dm, config.latent_dim, rng);
        let log_var_head = Linear::new(params, "encoder.head.log_var", dm, config.latent_dim, rng);
        Ok(Encoder {
            config: config.clone(),
            input,
            blocks,
            final_gain,
            final_bias,
            mean_head,
            log_var_head,
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn mean_head(&self) -> Linear {
        self.mean_head
    }

    pub fn log_var_head(&self) -> Linear {
        self.log_var_head
    }

    fn norm<S: Scalar>(&self, tape: &mut Tape<'_, S>, x: Var, gain: ParamId, bias: ParamId) -> Var {
        let n = tape.layer_norm(x, S::of(LAYER_NORM_EPS));
        let g = tape.param(gain.0);
        let b = tape.param(bias.0);
        let scaled = tape.mul_row(n, g);
        tape.add_row(scaled, b)
    }

    fn dropout<S: Scalar>(&self, tape: &mut Tape<'_, S>, x: Var, rng: &mut Option<&mut dyn RngCore>) -> Var {
        let p = self.config.dropout;
        match rng {
            Some(rng) if p > 0.0 => {
                let keep = S::of(1.0 / (1.0 - p));
                let mask = Array2::from_shape_fn(tape.shape(x), |_| {
                    if rng.gen::<f64>() < p {
                        S::zero()
                    } else {
                        keep
                    }
                });
                let m = tape.constant(mask);
                tape.mul(x, m)
            }
            _ => x,
        }
    }

    /// Records the encoder on `tape` for one `T × input_dim` sequence.
    /// Dropout is active only when `train_rng` is given.
    pub fn forward<S: Scalar>(
        &self,
        tape: &mut Tape<'_, S>,
        x: Var,
        mut train_rng: Option<&mut dyn RngCore>,
    ) -> Result<EncodedVars> {
        let (t, features) = tape.shape(x);
        if features != self.config.input_dim {
            return Err(Error::Contract(format!(
                "encoder expects {} features, got {features}",
                self.config.input_dim
            )));
        }
        let segments = segment_ranges(t, self.config.n_tokens)?;
        let dm = self.config.model_dim;
        let dh = self.config.head_dim();
        let attn_scale = S::of(1.0 / (dh as f64).sqrt());

        let projected = self.input.forward(tape, x);
        let pos = tape.constant(sinusoidal_positions(t, dm));
        let mut h = tape.add(projected, pos);
        tape.ensure_finite(h, "encoder input projection")?;

        for (l, block) in self.blocks.iter().enumerate() {
            let a = self.norm(tape, h, block.norm1_gain, block.norm1_bias);
            let qkv = block.qkv.forward(tape, a);
            let heads = (0..self.config.n_heads)
                .map(|head| {
                    let q = tape.slice_cols(qkv, head * dh..(head + 1) * dh);
                    let k = tape.slice_cols(qkv, dm + head * dh..dm + (head + 1) * dh);
                    let v = tape.slice_cols(qkv, 2 * dm + head * dh..2 * dm + (head + 1) * dh);
                    let scores = tape.matmul_nt(q, k);
                    let scores = tape.scale(scores, attn_scale);
                    let weights = tape.causal_softmax(scores);
                    tape.matmul(weights, v)
                })
                .collect::<Vec<_>>();
            let merged = if heads.len() == 1 { heads[0] } else { tape.concat_cols(&heads) };
            let attn = block.out.forward(tape, merged);
            let attn = self.dropout(tape, attn, &mut train_rng);
            h = tape.add(h, attn);

            let a = self.norm(tape, h, block.norm2_gain, block.norm2_bias);
            let f = block.ff_in.forward(tape, a);
            let f = tape.relu(f);
            let f = block.ff_out.forward(tape, f);
            let f = self.dropout(tape, f, &mut train_rng);
            h = tape.add(h, f);
            tape.ensure_finite(h, &format!("encoder layer {l}"))?;
        }

        let h = self.norm(tape, h, self.final_gain, self.final_bias);
        let pooled = tape.segment_mean(h, &segments);
        let means = self.mean_head.forward(tape, pooled);
        let log_vars = self.log_var_head.forward(tape, pooled);
        tape.ensure_finite(means, "encoder mean head")?;
        tape.ensure_finite(log_vars, "encoder log-variance head")?;
        Ok(EncodedVars { means, log_vars })
    }

    /// Deterministic encoding of one standardized sequence into `K` tokens.
    pub fn encode<S: Scalar>(&self, params: &ParamSet<S>, x: ArrayView2<'_, S>) -> Result<Vec<GaussianToken<S>>> {
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Contract("encoder input contains non-finite values".into()));
        }
        let segments = segment_ranges(x.nrows(), self.config.n_tokens)?;
        let mut tape = Tape::frozen(params);
        let xv = tape.constant(x.to_owned());
        let enc = self.forward(&mut tape, xv, None)?;
        let means = tape.value(enc.means);
        let log_vars = tape.value(enc.log_vars);
        Ok(segments
            .into_iter()
            .enumerate()
            .map(|(k, span)| GaussianToken {
                mean: means.row(k).to_owned(),
                log_var: log_vars.row(k).to_owned(),
                token_index: k,
                segment_span: span,
            })
            .collect())
    }
}

/// `z₀` from token 0: its mean, or a reparameterized draw `μ + exp(½ log σ²) ⊙ ε`.
pub fn initial_state<S: Scalar, R: Rng + ?Sized>(token: &GaussianToken<S>, mode: InitialStateMode, rng: &mut R) -> Array1<S> {
    match mode {
        InitialStateMode::Mean => token.mean.clone(),
        InitialStateMode::Sample => {
            let half = S::of(0.5);
            token
                .mean
                .iter()
                .zip(token.log_var.iter())
                .map(|(&m, &lv)| {
                    let eps: f64 = rng.sample(StandardNormal);
                    m + (lv * half).exp() * S::of(eps)
                })
                .collect()
        }
    }
}
