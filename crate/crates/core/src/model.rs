//! Encoder, latent vector field and decoder bound to one parameter set.

use ndarray::{Array2, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::decoder::{Decoder, DecoderConfig};
use crate::dynamics::{LatentPath, TimeGrid, VectorField, VectorFieldConfig};
use crate::encoder::{Encoder, EncoderConfig, GaussianToken};
use crate::error::{Error, Result};
use crate::params::ParamSet;
use crate::scalar::Scalar;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub vector_field: VectorFieldConfig,
    pub decoder: DecoderConfig,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.vector_field.validate()?;
        self.decoder.validate()?;
        let d = self.encoder.latent_dim;
        if self.vector_field.latent_dim != d || self.decoder.latent_dim != d {
            return Err(Error::Config(format!(
                "latent_dim disagrees: encoder {d}, vector field {}, decoder {}",
                self.vector_field.latent_dim, self.decoder.latent_dim
            )));
        }
        if self.decoder.output_dim != self.encoder.input_dim {
            return Err(Error::Config(format!(
                "decoder output_dim {} differs from encoder input_dim {}",
                self.decoder.output_dim, self.encoder.input_dim
            )));
        }
        Ok(())
    }

    pub fn latent_dim(&self) -> usize {
        self.encoder.latent_dim
    }

    pub fn feature_dim(&self) -> usize {
        self.encoder.input_dim
    }
}

/// The end-to-end latent ODE model.
#[derive(Clone, Debug)]
pub struct LatentOdeModel<S> {
    config: ModelConfig,
    pub params: ParamSet<S>,
    encoder: Encoder,
    field: VectorField,
    decoder: Decoder,
}

impl<S: Scalar> LatentOdeModel<S> {
    /// Freshly initialized model; parameter values depend only on `(config, init_rng)`.
    pub fn new(config: &ModelConfig, init_rng: &mut ChaCha8Rng) -> Result<Self> {
        config.validate()?;
        let mut params = ParamSet::new();
        let encoder = Encoder::new(&config.encoder, &mut params, init_rng)?;
        let field = VectorField::new(&config.vector_field, &mut params, init_rng)?;
        let decoder = Decoder::new(&config.decoder, &mut params, init_rng)?;
        Ok(LatentOdeModel {
            config: config.clone(),
            params,
            encoder,
            field,
            decoder,
        })
    }

    pub fn with_seed(config: &ModelConfig, seed: u64) -> Result<Self> {
        Self::new(config, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    /// Binds previously trained parameters; names and shapes must match `config`.
    pub fn from_params(config: &ModelConfig, params: ParamSet<S>) -> Result<Self> {
        let mut model = Self::with_seed(config, 0)?;
        if !model.params.same_layout(&params) {
            return Err(Error::format(
                "checkpoint",
                "parameter names or shapes do not match the model configuration",
            ));
        }
        model.params = params;
        Ok(model)
    }

    /// Same weights in another precision.
    pub fn cast<T: Scalar>(&self) -> LatentOdeModel<T> {
        LatentOdeModel {
            config: self.config.clone(),
            params: self.params.cast(),
            encoder: self.encoder.clone(),
            field: self.field.clone(),
            decoder: self.decoder.clone(),
        }
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn encoder(&self) -> &Encoder {
        &self.encoder
    }

    pub fn field(&self) -> &VectorField {
        &self.field
    }

    pub fn decoder(&self) -> &Decoder {
        &self.decoder
    }

    pub fn encode(&self, x: ArrayView2<'_, S>) -> Result<Vec<GaussianToken<S>>> {
        self.encoder.encode(&self.params, x)
    }

    /// Deterministic reconstruction of a standardized sequence from its first
    /// segment: token-0 mean, full-length flow, frame-wise decoding.
    pub fn predict_standardized(&self, x: ArrayView2<'_, S>) -> Result<(Array2<S>, LatentPath<S>)> {
        let tokens = self.encode(x)?;
        let grid = TimeGrid::new(x.nrows())?;
        let path = self.field.integrate(&self.params, tokens[0].mean.view(), &grid)?;
        let decoded = self.decoder.decode(&self.params, &path)?;
        Ok((decoded, path))
    }
}
