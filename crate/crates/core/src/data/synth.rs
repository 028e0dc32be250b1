//! Synthetic motion datasets generated from a known latent ODE and a fixed
//! linear observation map.

use ndarray::{array, Array1, Array2, ArrayView1};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::schema::JointSchema;
use super::window::MotionDataset;
use crate::dynamics::{rk4_solve, FnSystem, TimeGrid};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SynthDynamics {
    /// `ż = M z`
    Linear { matrix: [[f64; 3]; 3] },
    /// `ż₁ = z₂`, `ż₂ = −ω² sin z₁ − γ z₂`, `ż₃ = −α z₃ + sin z₁`
    DampedPendulum { omega: f64, damping: f64, relax: f64 },
}

impl Default for SynthDynamics {
    /// Slowly decaying rotation in the first plane plus a relaxing third axis.
    fn default() -> Self {
        SynthDynamics::Linear {
            matrix: [[-0.3, -4.0, 0.0], [4.0, -0.3, 0.0], [0.0, 0.0, -0.5]],
        }
    }
}

impl SynthDynamics {
    pub fn eval(&self, z: ArrayView1<'_, f64>) -> Array1<f64> {
        match self {
            SynthDynamics::Linear { matrix } => {
                Array1::from_iter((0..3).map(|r| (0..3).map(|c| matrix[r][c] * z[c]).sum::<f64>()))
            }
            SynthDynamics::DampedPendulum { omega, damping, relax } => array![
                z[1],
                -omega * omega * z[0].sin() - damping * z[1],
                -relax * z[2] + z[0].sin()
            ],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObservationMap {
    /// Dense Gaussian map and offset drawn from `map_seed`.
    Random,
    /// Fifteen stacked 3×3 identities, zero offset.
    IdentityBlocks,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub participant_id: String,
    pub n_trials: usize,
    pub n_frames: usize,
    pub latent_dim: usize,
    pub noise_std: f64,
    pub z0_std: f64,
    pub dynamics: SynthDynamics,
    pub observation: ObservationMap,
    pub map_seed: u64,
    /// Reference RK4 sub-steps per frame interval.
    pub substeps: usize,
    pub frame_rate: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            participant_id: "synthetic".into(),
            n_trials: 200,
            n_frames: 100,
            latent_dim: 3,
            noise_std: 0.02,
            z0_std: 1.0,
            dynamics: SynthDynamics::default(),
            observation: ObservationMap::Random,
            map_seed: 7,
            substeps: 20,
            frame_rate: 200.0,
        }
    }
}

/// Latent truth behind a synthetic dataset: `x(t) = A z(t) + b + ε`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub map: Array2<f64>,
    pub offset: Array1<f64>,
    pub latent_paths: Vec<Array2<f64>>,
}

impl GroundTruth {
    /// Noise-free observation of `latent_paths[trial]`.
    pub fn observe(&self, trial: usize) -> Array2<f64> {
        self.latent_paths[trial].dot(&self.map.t()) + &self.offset
    }
}

fn observation_map(cfg: &SynthConfig, dim: usize) -> Result<(Array2<f64>, Array1<f64>)> {
    match cfg.observation {
        ObservationMap::IdentityBlocks => Ok((
            Array2::from_shape_fn((dim, 3), |(r, c)| if r % 3 == c { 1.0 } else { 0.0 }),
            Array1::zeros(dim),
        )),
        ObservationMap::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.map_seed);
            let map = Array2::from_shape_fn((dim, 3), |_| rng.sample::<f64, _>(StandardNormal));
            let offset = Array1::from_shape_fn(dim, |_| rng.gen_range(-1.0..1.0));
            let gram = map.t().dot(&map);
            if det3(&gram) < 1e-8 {
                return Err(Error::Generation("observation map is rank deficient".into()));
            }
            Ok((map, offset))
        }
    }
}

fn det3(m: &Array2<f64>) -> f64 {
    m[[0, 0]] * (m[[1, 1]] * m[[2, 2]] - m[[1, 2]] * m[[2, 1]]) - m[[0, 1]] * (m[[1, 0]] * m[[2, 2]] - m[[1, 2]] * m[[2, 0]])
        + m[[0, 2]] * (m[[1, 0]] * m[[2, 1]] - m[[1, 1]] * m[[2, 0]])
}

/// Integrates the configured field from `z0` and samples it on the frame grid.
pub fn reference_path(dynamics: &SynthDynamics, z0: ArrayView1<'_, f64>, n_frames: usize, substeps: usize) -> Result<Array2<f64>> {
    let frame_grid = TimeGrid::<f64>::new(n_frames)?;
    let fine_n = (n_frames.max(2) - 1) * substeps.max(1) + 1;
    let fine = TimeGrid::<f64>::new(fine_n)?;
    let mut sys = FnSystem {
        f: |_t: f64, z: ArrayView1<'_, f64>| dynamics.eval(z),
    };
    let states = rk4_solve(&mut sys, z0.to_owned(), fine.times()).map_err(|e| Error::Generation(e.to_string()))?;
    let mut out = Array2::zeros((frame_grid.len(), z0.len()));
    for i in 0..frame_grid.len() {
        out.row_mut(i).assign(&states[i * substeps.max(1)]);
    }
    Ok(out)
}

pub fn synth_generate(cfg: &SynthConfig, seed: u64) -> Result<(MotionDataset, GroundTruth)> {
    if cfg.latent_dim != 3 {
        return Err(Error::Config("synthetic families are defined for a 3-dimensional latent state".into()));
    }
    if cfg.n_trials == 0 || cfg.n_frames < 2 {
        return Err(Error::Config("need at least one trial of two or more frames".into()));
    }
    if !(cfg.noise_std >= 0.0) || !(cfg.z0_std >= 0.0) {
        return Err(Error::Config("noise and initial-state spread must be non-negative".into()));
    }
    let schema = JointSchema::default();
    let dim = schema.feature_dim();
    let (map, offset) = observation_map(cfg, dim)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut trials = Vec::with_capacity(cfg.n_trials);
    let mut latent_paths = Vec::with_capacity(cfg.n_trials);
    for _ in 0..cfg.n_trials {
        let z0 = Array1::from_shape_fn(3, |_| cfg.z0_std * rng.sample::<f64, _>(StandardNormal));
        let path = reference_path(&cfg.dynamics, z0.view(), cfg.n_frames, cfg.substeps)?;
        if path.iter().any(|v| !v.is_finite()) {
            return Err(Error::Generation("latent path diverged".into()));
        }
        let mut x = path.dot(&map.t()) + &offset;
        if cfg.noise_std > 0.0 {
            x.mapv_inplace(|v| v + cfg.noise_std * rng.sample::<f64, _>(StandardNormal));
        }
        trials.push(x);
        latent_paths.push(path);
    }
    let dataset = MotionDataset {
        participant_id: cfg.participant_id.clone(),
        joint_schema: schema,
        frame_rate: cfg.frame_rate,
        units: "synthetic".into(),
        trial_ids: (0..cfg.n_trials).map(|i| format!("trial{i:04}")).collect(),
        trials,
        events: Vec::new(),
    };
    Ok((
        dataset,
        GroundTruth {
            map,
            offset,
            latent_paths,
        },
    ))
}
