//! Experiment configuration: one TOML document for model, training, folds and data.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::checkpoint::Precision;
use crate::data::io::read_text;
use crate::data::{EventOptions, SynthConfig};
use crate::decoder::DecoderConfig;
use crate::dynamics::VectorFieldConfig;
use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::evaluation::R2Centering;
use crate::model::ModelConfig;
use crate::train::TrainConfig;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataPaths {
    /// Participant manifest of raw trials, read by `ingest`.
    pub manifest: Option<PathBuf>,
    /// Windowed dataset archive, read by `train`, `eval` and `reconstruct`.
    pub archive: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub n_folds: usize,
    pub fold_seed: u64,
    pub precision: Precision,
    pub r2_centering: R2Centering,
    pub data: DataPaths,
    pub events: EventOptions,
    pub encoder: EncoderConfig,
    pub vector_field: VectorFieldConfig,
    pub decoder: DecoderConfig,
    pub train: TrainConfig,
    pub synth: SynthConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            n_folds: 10,
            fold_seed: 0,
            precision: Precision::F32,
            r2_centering: R2Centering::TestMean,
            data: DataPaths::default(),
            events: EventOptions::default(),
            encoder: EncoderConfig::default(),
            vector_field: VectorFieldConfig::default(),
            decoder: DecoderConfig::default(),
            train: TrainConfig::default(),
            synth: SynthConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn model(&self) -> ModelConfig {
        ModelConfig {
            encoder: self.encoder.clone(),
            vector_field: self.vector_field.clone(),
            decoder: self.decoder.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_folds < 2 {
            return Err(Error::Config("n_folds must be at least 2".into()));
        }
        if self.events.smoothing_window == 0 {
            return Err(Error::Config("events.smoothing_window must be positive".into()));
        }
        self.model().validate()?;
        self.train.validate()
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads a config; relative data paths resolve against the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg = Self::from_toml(&read_text(path)?)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.data.manifest, &mut cfg.data.archive].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// SHA-256 of the canonical serialization, recorded in run manifests.
    pub fn hash(&self) -> Result<String> {
        Ok(hex::encode(Sha256::digest(self.to_toml()?.as_bytes())))
    }
}
