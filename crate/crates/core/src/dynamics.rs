//! Learned latent vector field and its fixed-step Runge–Kutta flow.

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::nn::{Activation, Linear};
use crate::params::{ParamId, ParamSet};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VectorFieldConfig {
    pub latent_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub activation: Activation,
    pub time_input: bool,
}

impl Default for VectorFieldConfig {
    fn default() -> Self {
        VectorFieldConfig {
            latent_dim: 3,
            hidden_dims: vec![128, 128],
            activation: Activation::Tanh,
            time_input: true,
        }
    }
}

impl VectorFieldConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_dims.len() != 2 || self.hidden_dims.contains(&0) {
            return Err(Error::Config("vector field needs exactly two non-empty hidden layers".into()));
        }
        if self.activation != Activation::Tanh {
            return Err(Error::Config("vector field activation must be bounded and smooth (tanh)".into()));
        }
        if self.latent_dim == 0 {
            return Err(Error::Config("latent_dim must be positive".into()));
        }
        Ok(())
    }
}

/// Uniform grid `τ_i = i / (T − 1)` on `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct TimeGrid<S> {
    times: Vec<S>,
}

impl<S: Scalar> TimeGrid<S> {
    pub fn new(n_points: usize) -> Result<Self> {
        if n_points == 0 {
            return Err(Error::Config("time grid needs at least one point".into()));
        }
        let denom = (n_points.max(2) - 1) as f64;
        Ok(TimeGrid {
            times: (0..n_points).map(|i| S::of(i as f64 / denom)).collect(),
        })
    }

    /// Grid over arbitrary strictly increasing times.
    pub fn from_times(times: Vec<S>) -> Result<Self> {
        if times.is_empty() || times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config("grid times must be non-empty and strictly increasing".into()));
        }
        Ok(TimeGrid { times })
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn times(&self) -> &[S] {
        &self.times
    }

    /// Points `range` of this grid as a grid of their own.
    pub fn sub_grid(&self, range: std::ops::Range<usize>) -> Result<Self> {
        Self::from_times(self.times[range].to_vec())
    }
}

/// Latent trajectory, one row per grid point; row 0 is `z₀`.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentPath<S> {
    pub states: Array2<S>,
    pub initial: Array1<S>,
}

/// Right-hand side of an ODE with a user-chosen state representation.
pub trait OdeSystem<S: Scalar> {
    type State: Clone;

    fn derivative(&mut self, t: S, z: &Self::State) -> Result<Self::State>;

    /// `base + Σ cᵢ · termᵢ`
    fn combine(&mut self, base: &Self::State, terms: &[(S, &Self::State)]) -> Self::State;

    fn is_finite(&self, z: &Self::State) -> bool;
}

/// One classical fourth-order Runge–Kutta step of size `h` from `(t, z)`.
pub fn rk4_step<S: Scalar, O: OdeSystem<S>>(sys: &mut O, t: S, z: &O::State, h: S) -> Result<O::State> {
    let two = S::of(2.0);
    let half_h = h / two;
    let k1 = sys.derivative(t, z)?;
    let z2 = sys.combine(z, &[(half_h, &k1)]);
    let k2 = sys.derivative(t + half_h, &z2)?;
    let z3 = sys.combine(z, &[(half_h, &k2)]);
    let k3 = sys.derivative(t + half_h, &z3)?;
    let z4 = sys.combine(z, &[(h, &k3)]);
    let k4 = sys.derivative(t + h, &z4)?;
    let sixth = h / S::of(6.0);
    Ok(sys.combine(z, &[(sixth, &k1), (sixth * two, &k2), (sixth * two, &k3), (sixth, &k4)]))
}

/// Integrates from `z0` at `times[0]` taking exactly one RK4 step per interval.
/// Returns one state per grid point, the first being `z0` itself.
pub fn rk4_solve<S: Scalar, O: OdeSystem<S>>(sys: &mut O, z0: O::State, times: &[S]) -> Result<Vec<O::State>> {
    let mut states = Vec::with_capacity(times.len());
    states.push(z0);
    for (i, w) in times.windows(2).enumerate() {
        let next = rk4_step(sys, w[0], &states[i], w[1] - w[0])?;
        if !sys.is_finite(&next) {
            return Err(Error::Integration { step: i + 1 });
        }
        states.push(next);
    }
    Ok(states)
}

/// ODE on plain vectors with a closure right-hand side.
pub struct FnSystem<F> {
    pub f: F,
}

impl<S, F> OdeSystem<S> for FnSystem<F>
where
    S: Scalar,
    F: FnMut(S, ArrayView1<'_, S>) -> Array1<S>,
{
    type State = Array1<S>;

    fn derivative(&mut self, t: S, z: &Array1<S>) -> Result<Array1<S>> {
        Ok((self.f)(t, z.view()))
    }

    fn combine(&mut self, base: &Array1<S>, terms: &[(S, &Array1<S>)]) -> Array1<S> {
        let mut out = base.clone();
        for (c, term) in terms {
            out.scaled_add(*c, term);
        }
        out
    }

    fn is_finite(&self, z: &Array1<S>) -> bool {
        z.iter().all(|v| v.is_finite())
    }
}

/// Parameter layout of the MLP `f_θ(z, t)`.
#[derive(Clone, Debug)]
pub struct VectorField {
    config: VectorFieldConfig,
    input: Linear,
    time_weight: Option<ParamId>,
    hidden: Linear,
    output: Linear,
}

impl VectorField {
    pub fn new<S: Scalar, R: Rng>(config: &VectorFieldConfig, params: &mut ParamSet<S>, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let (h1, h2) = (config.hidden_dims[0], config.hidden_dims[1]);
        let fan_in = config.latent_dim + usize::from(config.time_input);
        // The input layer is stored split into state and time columns.
        let bound = 1.0 / (fan_in as f64).sqrt();
        let mut uniform = |rows: usize, cols: usize| {
            Array2::from_shape_fn((rows, cols), |_| S::of(rng.gen_range(-bound..bound)))
        };
        let w_z = params.insert("field.0.weight", uniform(config.latent_dim, h1));
        let time_weight = config.time_input.then(|| params.insert("field.0.time_weight", uniform(1, h1)));
        let b0 = params.insert_zeros("field.0.bias", 1, h1);
        let hidden = Linear::new(params, "field.1", h1, h2, rng);
        let output = Linear::new(params, "field.2", h2, config.latent_dim, rng);
        Ok(VectorField {
            config: config.clone(),
            input: Linear { weight: w_z, bias: b0 },
            time_weight,
            hidden,
            output,
        })
    }

    pub fn config(&self) -> &VectorFieldConfig {
        &self.config
    }

    /// `f_θ(z, t)` for a batch of states `z` (`B × d`) sharing one time.
    pub fn forward<S: Scalar>(&self, tape: &mut Tape<'_, S>, z: Var, t: S) -> Var {
        let w = tape.param(self.input.weight.0);
        let mut bias = tape.param(self.input.bias.0);
        if let Some(tw) = self.time_weight {
            let tw = tape.param(tw.0);
            let shift = tape.scale(tw, t);
            bias = tape.add(bias, shift);
        }
        let zw = tape.matmul(z, w);
        let h = tape.add_row(zw, bias);
        let h = self.config.activation.apply(tape, h);
        let h = self.hidden.forward(tape, h);
        let h = self.config.activation.apply(tape, h);
        self.output.forward(tape, h)
    }

    /// Evaluates the field at a single point.
    pub fn eval<S: Scalar>(&self, params: &ParamSet<S>, z: ArrayView1<'_, S>, t: S) -> Result<Array1<S>> {
        let mut tape = Tape::frozen(params);
        let zv = tape.constant(z.to_owned().insert_axis(Axis(0)));
        let out = self.forward(&mut tape, zv, t);
        tape.ensure_finite(out, "vector field")?;
        Ok(tape.value(out).row(0).to_owned())
    }

    /// Records the batched flow from `z0` (`B × d`) over `grid`; one node per grid point.
    pub fn integrate_on_tape<S: Scalar>(&self, tape: &mut Tape<'_, S>, z0: Var, grid: &TimeGrid<S>) -> Result<Vec<Var>> {
        let mut sys = TapeField { field: self, tape };
        rk4_solve(&mut sys, z0, grid.times())
    }

    /// Deterministic latent path from a single initial state.
    pub fn integrate<S: Scalar>(&self, params: &ParamSet<S>, z0: ArrayView1<'_, S>, grid: &TimeGrid<S>) -> Result<LatentPath<S>> {
        if z0.len() != self.config.latent_dim || z0.iter().any(|v| !v.is_finite()) {
            return Err(Error::Contract("initial state must be finite with latent_dim entries".into()));
        }
        let batch = self.integrate_batch(params, z0.to_owned().insert_axis(Axis(0)), grid)?;
        Ok(batch.into_iter().next().expect("one path"))
    }

    /// Integrates every row of `z0` as an independent trajectory.
    pub fn integrate_batch<S: Scalar>(&self, params: &ParamSet<S>, z0: Array2<S>, grid: &TimeGrid<S>) -> Result<Vec<LatentPath<S>>> {
        let mut tape = Tape::frozen(params);
        let z = tape.constant(z0.clone());
        let states = self.integrate_on_tape(&mut tape, z, grid)?;
        Ok(z0
            .outer_iter()
            .enumerate()
            .map(|(b, init)| {
                let mut path = Array2::zeros((grid.len(), self.config.latent_dim));
                for (i, &s) in states.iter().enumerate() {
                    path.row_mut(i).assign(&tape.value(s).row(b));
                }
                LatentPath {
                    states: path,
                    initial: init.to_owned(),
                }
            })
            .collect())
    }
}

struct TapeField<'a, 'p, S: Scalar> {
    field: &'a VectorField,
    tape: &'a mut Tape<'p, S>,
}

impl<S: Scalar> OdeSystem<S> for TapeField<'_, '_, S> {
    type State = Var;

    fn derivative(&mut self, t: S, z: &Var) -> Result<Var> {
        Ok(self.field.forward(self.tape, *z, t))
    }

    fn combine(&mut self, base: &Var, terms: &[(S, &Var)]) -> Var {
        let mut acc: Option<Var> = None;
        for (c, term) in terms {
            let scaled = self.tape.scale(**term, *c);
            acc = Some(match acc {
                Some(a) => self.tape.add(a, scaled),
                None => scaled,
            });
        }
        match acc {
            Some(a) => self.tape.add(*base, a),
            None => *base,
        }
    }

    fn is_finite(&self, z: &Var) -> bool {
        self.tape.value(*z).iter().all(|v| v.is_finite())
    }
}
