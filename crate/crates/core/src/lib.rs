//! Latent neural-ODE model of whole-body throwing motion.
//!
//! Numeric code is generic over [`Scalar`]; the aliases below fix the
//! precision for the common cases.

pub mod autodiff;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod decoder;
pub mod dynamics;
pub mod encoder;
pub mod error;
pub mod evaluation;
pub mod experiment;
pub mod loss;
pub mod model;
pub mod nn;
pub mod optim;
pub mod params;
pub mod scalar;
pub mod train;

pub use checkpoint::{Checkpoint, Precision, ValidationMetrics};
pub use config::{DataPaths, ExperimentConfig};
pub use decoder::{Decoder, DecoderConfig};
pub use dynamics::{LatentPath, TimeGrid, VectorField, VectorFieldConfig};
pub use encoder::{Encoder, EncoderConfig, GaussianToken, InitialStateMode};
pub use error::{Error, Result};
pub use evaluation::{EvalReport, MeanBaseline, ParticipantSummary, Prediction, R2Centering};
pub use loss::{kl_loss, recon_loss, LossBreakdown, LossWeights};
pub use model::{LatentOdeModel, ModelConfig};
pub use optim::{Adam, AdamConfig};
pub use params::{ParamId, ParamSet};
pub use scalar::Scalar;
pub use train::{train_fold, FoldModel, TrainConfig, TrainHistory};

pub type Model32 = LatentOdeModel<f32>;
pub type Model64 = LatentOdeModel<f64>;
pub type Params32 = ParamSet<f32>;
pub type Params64 = ParamSet<f64>;
pub type Tape32<'p> = autodiff::Tape<'p, f32>;
pub type Tape64<'p> = autodiff::Tape<'p, f64>;
pub type FoldModel32 = FoldModel<f32>;
pub type FoldModel64 = FoldModel<f64>;
