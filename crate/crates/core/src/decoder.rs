//! Frame-wise MLP from latent states back to standardized joint positions.

use ndarray::{Array2, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::dynamics::LatentPath;
use crate::error::{Error, Result};
use crate::nn::{Activation, Mlp};
use crate::params::ParamSet;
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecoderConfig {
    pub latent_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub activation: Activation,
    pub output_dim: usize,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        DecoderConfig {
            latent_dim: 3,
            hidden_dims: vec![256, 256],
            activation: Activation::Relu,
            output_dim: 45,
        }
    }
}

impl DecoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_dims.len() != 2 || self.hidden_dims.contains(&0) {
            return Err(Error::Config("decoder needs exactly two non-empty hidden layers".into()));
        }
        if self.latent_dim == 0 || self.output_dim == 0 {
            return Err(Error::Config("decoder dimensions must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct Decoder {
    config: DecoderConfig,
    mlp: Mlp,
}

impl Decoder {
    pub fn new<S: Scalar, R: Rng>(config: &DecoderConfig, params: &mut ParamSet<S>, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let mlp = Mlp::new(
            params,
            "decoder",
            config.latent_dim,
            &config.hidden_dims,
            config.output_dim,
            config.activation,
            rng,
        );
        Ok(Decoder {
            config: config.clone(),
            mlp,
        })
    }

    pub fn config(&self) -> &DecoderConfig {
        &self.config
    }

    pub fn output_bias(&self) -> crate::params::ParamId {
        self.mlp.layers.last().expect("output layer").bias
    }

    /// Rows of `latent` (`N × d`) to rows of motion (`N × D`).
    pub fn forward<S: Scalar>(&self, tape: &mut Tape<'_, S>, latent: Var) -> Var {
        self.mlp.forward(tape, latent)
    }

    pub fn decode_states<S: Scalar>(&self, params: &ParamSet<S>, states: ArrayView2<'_, S>) -> Result<Array2<S>> {
        if states.ncols() != self.config.latent_dim {
            return Err(Error::Contract(format!(
                "decoder expects latent dim {}, got {}",
                self.config.latent_dim,
                states.ncols()
            )));
        }
        let mut tape = Tape::frozen(params);
        let z = tape.constant(states.to_owned());
        let out = self.forward(&mut tape, z);
        tape.ensure_finite(out, "decoder")?;
        Ok(tape.value(out).to_owned())
    }

    pub fn decode<S: Scalar>(&self, params: &ParamSet<S>, path: &LatentPath<S>) -> Result<Array2<S>> {
        self.decode_states(params, path.states.view())
    }
}
