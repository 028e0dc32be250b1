//! Finite-difference checks of each module's parameter gradients in f64.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use latentflow::autodiff::{Tape, Var};
use latentflow::*;

fn normal(shape: (usize, usize), rng: &mut ChaCha8Rng) -> Array2<f64> {
    Array2::from_shape_fn(shape, |_| rng.sample(StandardNormal))
}

/// `Σ W ⊙ v` with a fixed random `W`, so every output entry matters.
fn project(tape: &mut Tape<'_, f64>, v: Var, seed: u64) -> Var {
    let w = normal(tape.shape(v), &mut ChaCha8Rng::seed_from_u64(seed));
    let w = tape.constant(w);
    let p = tape.mul(v, w);
    tape.sum(p)
}

/// Worst relative error over `checks` random parameters with non-vanishing gradient.
fn worst_error(params: &mut ParamSet<f64>, checks: usize, build: impl Fn(&mut Tape<'_, f64>) -> Var) -> f64 {
    let analytic: Vec<f64> = {
        let mut tape = Tape::with_params(params);
        let out = build(&mut tape);
        tape.backward(out)
            .param_grads(params)
            .iter()
            .flat_map(|g| g.iter().copied().collect::<Vec<_>>())
            .collect()
    };
    let eval = |p: &ParamSet<f64>| {
        let mut tape = Tape::frozen(p);
        let out = build(&mut tape);
        tape.scalar(out)
    };
    let h = 1e-6;
    let mut rng = ChaCha8Rng::seed_from_u64(1234);
    let mut worst = 0.0f64;
    let mut done = 0;
    let mut tries = 0;
    while done < checks && tries < 50 * checks {
        tries += 1;
        let k = rng.gen_range(0..params.numel());
        let x = params.flat_get(k);
        params.flat_set(k, x + h);
        let up = eval(params);
        params.flat_set(k, x - h);
        let down = eval(params);
        params.flat_set(k, x);
        let numeric = (up - down) / (2.0 * h);
        let scale = analytic[k].abs().max(numeric.abs());
        if scale < 1e-7 {
            continue;
        }
        worst = worst.max((analytic[k] - numeric).abs() / scale);
        done += 1;
    }
    assert_eq!(done, checks, "too few parameters with a measurable gradient");
    worst
}

#[test]
fn encoder_gradients() {
    let cfg = EncoderConfig {
        n_layers: 2,
        n_heads: 2,
        model_dim: 8,
        feedforward_dim: 12,
        n_tokens: 3,
        ..Default::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut params = ParamSet::new();
    let encoder = Encoder::new(&cfg, &mut params, &mut rng).unwrap();
    let x = normal((6, 45), &mut rng);
    let worst = worst_error(&mut params, 40, |tape| {
        let xv = tape.constant(x.clone());
        let enc = encoder.forward(tape, xv, None).unwrap();
        let a = project(tape, enc.means, 10);
        let b = project(tape, enc.log_vars, 11);
        tape.add(a, b)
    });
    assert!(worst < 1e-4, "worst relative error {worst:e}");
}

#[test]
fn vector_field_gradients() {
    let cfg = VectorFieldConfig {
        hidden_dims: vec![8, 8],
        ..Default::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut params = ParamSet::new();
    let field = VectorField::new(&cfg, &mut params, &mut rng).unwrap();
    let z0 = normal((4, 3), &mut rng);
    let grid = TimeGrid::new(9).unwrap();
    let worst = worst_error(&mut params, 30, |tape| {
        let z = tape.constant(z0.clone());
        let states = field.integrate_on_tape(tape, z, &grid).unwrap();
        let all = tape.concat_rows(&states);
        project(tape, all, 20)
    });
    assert!(worst < 1e-4, "worst relative error {worst:e}");
}

#[test]
fn initial_state_gradient_through_flow() {
    let cfg = VectorFieldConfig {
        hidden_dims: vec![6, 6],
        ..Default::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut params = ParamSet::new();
    let field = VectorField::new(&cfg, &mut params, &mut rng).unwrap();
    let z0 = normal((2, 3), &mut rng);
    let grid = TimeGrid::new(7).unwrap();
    let loss = |z: &Array2<f64>, track: bool| {
        let mut tape = if track { Tape::with_params(&params) } else { Tape::frozen(&params) };
        let zv = tape.variable(z.clone());
        let states = field.integrate_on_tape(&mut tape, zv, &grid).unwrap();
        let out = project(&mut tape, *states.last().unwrap(), 30);
        let g = track.then(|| tape.backward(out).get_or_zeros(zv, z.dim()));
        (tape.scalar(out), g)
    };
    let analytic = loss(&z0, true).1.unwrap();
    for ((r, c), &a) in analytic.indexed_iter() {
        let mut up = z0.clone();
        up[[r, c]] += 1e-6;
        let mut down = z0.clone();
        down[[r, c]] -= 1e-6;
        let numeric = (loss(&up, false).0 - loss(&down, false).0) / 2e-6;
        assert!((a - numeric).abs() <= 1e-5 * a.abs().max(1e-3), "({r},{c}): {a} vs {numeric}");
    }
}

#[test]
fn decoder_gradients() {
    let cfg = DecoderConfig {
        hidden_dims: vec![16, 16],
        ..Default::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut params = ParamSet::new();
    let decoder = Decoder::new(&cfg, &mut params, &mut rng).unwrap();
    let z = normal((10, 3), &mut rng);
    let worst = worst_error(&mut params, 40, |tape| {
        let zv = tape.constant(z.clone());
        let out = decoder.forward(tape, zv);
        project(tape, out, 40)
    });
    assert!(worst < 1e-4, "worst relative error {worst:e}");
}
