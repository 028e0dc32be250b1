//! Desk-scale acceptance gate. Each test writes one `PASS`/`FAIL` line to
//! stderr (bypassing the harness capture) before asserting.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use latentflow::data::{
    detect_onset, detect_release, fit_stats, make_folds, synth_generate, EventOptions, MotionDataset, SynthConfig,
};
use latentflow::dynamics::{rk4_solve, FnSystem};
use latentflow::encoder::segment_ranges;
use latentflow::evaluation::{predict, r2_curve, rmse_curve};
use latentflow::experiment::{self, Layout};
use latentflow::loss::total_loss;
use latentflow::*;

fn verdict(id: u32, name: &str, pass: bool, detail: String, started: Instant) {
    let line = format!(
        "acceptance {id} {name}: {} ({detail}; {:.1}s)\n",
        if pass { "PASS" } else { "FAIL" },
        started.elapsed().as_secs_f64()
    );
    let _ = std::io::stderr().write_all(line.as_bytes());
    assert!(pass, "{}", line.trim_end());
}

// 1 ------------------------------------------------------------------------

fn decay_error(steps: usize) -> f64 {
    let grid = TimeGrid::<f64>::new(steps + 1).unwrap();
    let mut sys = FnSystem {
        f: |_t: f64, z: ArrayView1<'_, f64>| z.mapv(|v| -v),
    };
    let path = rk4_solve(&mut sys, Array1::from_elem(1, 1.0), grid.times()).unwrap();
    (path.last().unwrap()[0] - (-1.0f64).exp()).abs()
}

#[test]
fn c1_rk4_correctness() {
    let started = Instant::now();
    let err100 = decay_error(100);
    let steps = [10usize, 20, 40, 80];
    let xs: Vec<f64> = steps.iter().map(|&n| (1.0 / n as f64).ln()).collect();
    let ys: Vec<f64> = steps.iter().map(|&n| decay_error(n).ln()).collect();
    let (mx, my) = (xs.iter().sum::<f64>() / 4.0, ys.iter().sum::<f64>() / 4.0);
    let slope = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>()
        / xs.iter().map(|x| (x - mx) * (x - mx)).sum::<f64>();
    let secs = started.elapsed().as_secs_f64();
    verdict(
        1,
        "rk4",
        err100 < 1e-8 && (3.9..=4.1).contains(&slope) && secs < 1.0,
        format!("error at 100 steps {err100:.2e}, order {slope:.3}"),
        started,
    );
}

// 2 ------------------------------------------------------------------------

#[test]
fn c2_end_to_end_gradients() {
    let started = Instant::now();
    let mut cfg = ModelConfig::default();
    cfg.encoder.model_dim = 8;
    cfg.encoder.n_heads = 2;
    cfg.encoder.feedforward_dim = 16;
    cfg.encoder.n_tokens = 3;
    cfg.encoder.latent_dim = 2;
    cfg.vector_field.latent_dim = 2;
    cfg.vector_field.hidden_dims = vec![8, 8];
    cfg.decoder.latent_dim = 2;
    cfg.decoder.hidden_dims = vec![8, 8];
    let mut model = Model64::with_seed(&cfg, 21).unwrap();

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let batch: Vec<Array2<f64>> = (0..2)
        .map(|_| Array2::from_shape_fn((12, 45), |_| rng.sample::<f64, _>(StandardNormal)))
        .collect();
    let views: Vec<_> = batch.iter().map(|b| b.view()).collect();
    let weights = LossWeights::default();
    let noise_seed = 77;
    let loss_at = |m: &Model64| {
        total_loss(m, &views, weights, InitialStateMode::Sample, &mut ChaCha8Rng::seed_from_u64(noise_seed))
            .unwrap()
            .total
    };
    let (_, grads) =
        loss::loss_and_grads(&model, &views, weights, InitialStateMode::Sample, &mut ChaCha8Rng::seed_from_u64(noise_seed))
            .unwrap();
    let flat: Vec<f64> = grads.iter().flat_map(|g| g.iter().copied()).collect();

    let n = model.params.numel();
    let h = 1e-6;
    let mut worst = 0.0f64;
    let mut checked = 0;
    let mut pick = ChaCha8Rng::seed_from_u64(99);
    while checked < 24 {
        let k = pick.gen_range(0..n);
        let original = model.params.flat_get(k);
        model.params.flat_set(k, original + h);
        let up = loss_at(&model);
        model.params.flat_set(k, original - h);
        let down = loss_at(&model);
        model.params.flat_set(k, original);
        let numeric = (up - down) / (2.0 * h);
        let analytic = flat[k];
        let scale = analytic.abs().max(numeric.abs());
        if scale < 1e-7 {
            // both vanish; a relative error is meaningless here
            continue;
        }
        worst = worst.max((analytic - numeric).abs() / scale);
        checked += 1;
    }
    let secs = started.elapsed().as_secs_f64();
    verdict(
        2,
        "gradients",
        worst < 1e-3 && secs < 30.0,
        format!("{checked} parameters, worst relative error {worst:.2e}"),
        started,
    );
}

// 3 ------------------------------------------------------------------------

#[test]
fn c3_kl_monte_carlo() {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let samples = 100_000;
    let mut worst_z = 0.0f64;
    for _ in 0..10 {
        let mean: Array1<f64> = Array1::from_shape_fn(3, |_| rng.gen_range(-1.5..1.5));
        let log_var: Array1<f64> = Array1::from_shape_fn(3, |_| rng.gen_range(-1.5..1.0));
        let tok = GaussianToken {
            mean: mean.clone(),
            log_var: log_var.clone(),
            token_index: 0,
            segment_span: 0..1,
        };
        let closed = kl_loss(&[tok]);
        // log q(z) − log p(z) under z ~ q
        let std = log_var.mapv(|v| (0.5 * v).exp());
        let (mut sum, mut sum_sq) = (0.0, 0.0);
        for _ in 0..samples {
            let mut term = 0.0;
            for j in 0..3 {
                let eps: f64 = rng.sample(StandardNormal);
                let z = mean[j] + std[j] * eps;
                term += -0.5 * log_var[j] - 0.5 * eps * eps + 0.5 * z * z;
            }
            sum += term;
            sum_sq += term * term;
        }
        let n = samples as f64;
        let mc = sum / n;
        let se = ((sum_sq / n - mc * mc) / (n - 1.0)).sqrt();
        worst_z = worst_z.max((closed - mc).abs() / se);
    }
    let secs = started.elapsed().as_secs_f64();
    verdict(
        3,
        "kl",
        worst_z < 3.0 && secs < 10.0,
        format!("largest deviation {worst_z:.2} standard errors"),
        started,
    );
}

// 4 ------------------------------------------------------------------------

#[test]
fn c4_causality() {
    let started = Instant::now();
    let cfg = ModelConfig::default();
    let model = Model32::with_seed(&cfg, 4).unwrap();
    let stats = data::StandardizationStats {
        mean: vec![0.0; 45],
        std: vec![1.0; 45],
    };
    let mut rng = ChaCha8Rng::seed_from_u64(44);
    let mut ok = true;
    for case in 0..20 {
        let t = rng.gen_range(24..64);
        let x = Array2::from_shape_fn((t, 45), |_| rng.sample::<f32, _>(StandardNormal));
        let segments = segment_ranges(t, cfg.encoder.n_tokens).unwrap();
        let k = rng.gen_range(0..cfg.encoder.n_tokens - 1);
        let mut y = x.clone();
        y.slice_mut(s![segments[k].end.., ..]).mapv_inplace(|v| v * 3.0 - 1.5);

        let a = model.encode(x.view()).unwrap();
        let b = model.encode(y.view()).unwrap();
        for j in 0..=k {
            if a[j].mean != b[j].mean || a[j].log_var != b[j].log_var {
                eprintln!("case {case}: token {j} changed after perturbing beyond token {k}");
                ok = false;
            }
        }
        let mut z = x.clone();
        z.slice_mut(s![segments[0].end.., ..]).mapv_inplace(|v| -v + 0.25);
        let px = predict(&model, x.view(), &stats).unwrap();
        let pz = predict(&model, z.view(), &stats).unwrap();
        if px.predicted != pz.predicted {
            eprintln!("case {case}: prediction depends on frames after the first segment");
            ok = false;
        }
    }
    let secs = started.elapsed().as_secs_f64();
    verdict(4, "causality", ok && secs < 30.0, "20 random inputs".into(), started);
}

// 5 ------------------------------------------------------------------------

fn brute_rmse(truth: &[Array2<f64>], pred: &[Array2<f64>]) -> Vec<f64> {
    let (t_len, f) = truth[0].dim();
    let mut out = vec![0.0; t_len];
    for t in 0..t_len {
        let mut acc = 0.0;
        for n in 0..truth.len() {
            for c in 0..f {
                let e = truth[n][[t, c]] - pred[n][[t, c]];
                acc += e * e;
            }
        }
        out[t] = (acc / (truth.len() * f) as f64).sqrt();
    }
    out
}

fn brute_r2(truth: &[Array2<f64>], pred: &[Array2<f64>]) -> Vec<Option<f64>> {
    let (t_len, f) = truth[0].dim();
    let mut out = vec![None; t_len];
    for t in 0..t_len {
        let mut mean = vec![0.0; f];
        for n in 0..truth.len() {
            for c in 0..f {
                mean[c] += truth[n][[t, c]];
            }
        }
        for m in &mut mean {
            *m /= truth.len() as f64;
        }
        let (mut res, mut ori) = (0.0, 0.0);
        for n in 0..truth.len() {
            for c in 0..f {
                res += (truth[n][[t, c]] - pred[n][[t, c]]).powi(2);
                ori += (truth[n][[t, c]] - mean[c]).powi(2);
            }
        }
        if ori != 0.0 {
            out[t] = Some(1.0 - res / ori);
        }
    }
    out
}

fn views(v: &[Array2<f64>]) -> Vec<ArrayView2<'_, f64>> {
    v.iter().map(|a| a.view()).collect()
}

#[test]
fn c5_metric_oracles() {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(55);
    let mut mismatches = 0;
    let mut undefined_seen = 0;
    for _ in 0..50 {
        let n = rng.gen_range(2..=3);
        let f = rng.gen_range(1..=2);
        let t = rng.gen_range(1..=4);
        let mut draw = |_| Array2::from_shape_fn((t, f), |_| rng.gen_range(-3..=3) as f64);
        let truth: Vec<_> = (0..n).map(&mut draw).collect();
        let pred: Vec<_> = (0..n).map(&mut draw).collect();
        if rmse_curve(&views(&truth), &views(&pred)).unwrap() != brute_rmse(&truth, &pred) {
            mismatches += 1;
        }
        let r2 = r2_curve(&views(&truth), &views(&pred), None).unwrap();
        undefined_seen += r2.iter().filter(|v| v.is_none()).count();
        if r2 != brute_r2(&truth, &pred) {
            mismatches += 1;
        }
    }
    // Exact anchors: perfect prediction and test-mean prediction.
    let mut anchors_ok = true;
    for _ in 0..20 {
        let truth: Vec<_> = (0..4)
            .map(|_| Array2::from_shape_fn((4, 2), |_| rng.gen_range(-8..=8) as f64))
            .collect();
        let perfect = r2_curve(&views(&truth), &views(&truth), None).unwrap();
        anchors_ok &= perfect.iter().all(|v| v.is_none() || *v == Some(1.0));
        let mean = truth.iter().fold(Array2::zeros((4, 2)), |acc, x| acc + x) / 4.0;
        let means = vec![mean; 4];
        let flat = r2_curve(&views(&truth), &views(&means), None).unwrap();
        anchors_ok &= flat.iter().all(|v| v.is_none() || *v == Some(0.0));
    }
    verdict(
        5,
        "metrics",
        mismatches == 0 && anchors_ok,
        format!("50 random cases, {mismatches} mismatches, {undefined_seen} undefined frames matched"),
        started,
    );
}

// 6 ------------------------------------------------------------------------

fn oracle_velocity(x: &[f64], fr: f64, window: usize) -> Vec<f64> {
    let n = x.len();
    let raw: Vec<f64> = (0..n)
        .map(|i| match i {
            0 => (x[1] - x[0]) * fr,
            i if i == n - 1 => (x[n - 1] - x[n - 2]) * fr,
            i => (x[i + 1] - x[i - 1]) * (fr / 2.0),
        })
        .collect();
    let r = window / 2;
    (0..n)
        .map(|i| {
            let lo = i.saturating_sub(r);
            let hi = (i + r).min(n - 1);
            let mut acc = 0.0;
            for v in &raw[lo..=hi] {
                acc += v;
            }
            acc / (hi - lo + 1) as f64
        })
        .collect()
}

/// Every frame before the fastest rise is a candidate; the onset is the
/// candidate below threshold with no sub-threshold frame between it and the
/// fastest rise.
fn oracle_onset(height: &[f64], fr: f64, window: usize) -> (usize, usize) {
    let peak = (0..height.len()).find(|&i| height.iter().all(|&h| h <= height[i])).unwrap();
    let v = oracle_velocity(height, fr, window);
    let fastest = (0..=peak).find(|&i| (0..=peak).all(|j| v[j] <= v[i])).unwrap();
    let thr = 0.05 * v[fastest];
    let onset = (0..=fastest)
        .filter(|&i| v[i] < thr && (i + 1..=fastest).all(|j| v[j] >= thr))
        .max()
        .unwrap_or(0);
    (peak, onset)
}

fn oracle_release(wrist: &Array2<f64>, fr: f64, window: usize) -> usize {
    let cols: Vec<Vec<f64>> = (0..3).map(|c| oracle_velocity(&wrist.column(c).to_vec(), fr, window)).collect();
    let n = wrist.nrows();
    let speed: Vec<f64> = (0..n)
        .map(|i| (cols[0][i].powi(2) + cols[1][i].powi(2) + cols[2][i].powi(2)).sqrt())
        .collect();
    (1..n - 1)
        .find(|&i| (1..n - 1).all(|j| speed[j] <= speed[i]))
        .unwrap()
}

fn random_throw(rng: &mut ChaCha8Rng) -> (Vec<f64>, Array2<f64>) {
    let n = rng.gen_range(60..160);
    let rest = rng.gen_range(5..n / 4);
    let peak = rng.gen_range(n / 3..n / 2);
    let lift = rng.gen_range(150.0..450.0);
    let base = rng.gen_range(300.0..600.0);
    let height: Vec<f64> = (0..n)
        .map(|i| {
            let shape = if i < rest {
                0.0
            } else if i <= peak {
                let u = (i - rest) as f64 / (peak - rest) as f64;
                0.5 - 0.5 * (std::f64::consts::PI * u).cos()
            } else {
                (-((i - peak) as f64) / 15.0).exp()
            };
            (base + lift * shape + rng.gen_range(-2.0..2.0)).round()
        })
        .collect();
    let release = rng.gen_range(peak + 5..n - 3);
    let dir: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let wrist = Array2::from_shape_fn((n, 3), |(i, c)| {
        let u = (i as f64 - release as f64) / 6.0;
        (1200.0 * dir[c] * (1.0 + u.tanh()) + rng.gen_range(-3.0..3.0)).round()
    });
    (height, wrist)
}

#[test]
fn c6_event_detection_oracle() {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(66);
    let fr = 200.0;
    let opts = EventOptions::default();
    let (mut mismatches, mut variant_breaks) = (0, 0);
    for _ in 0..100 {
        let (height, wrist) = random_throw(&mut rng);
        let h = Array1::from(height.clone());
        let onset = detect_onset(h.view(), fr, opts).unwrap();
        let release = detect_release(wrist.view(), fr, opts).unwrap();
        let (peak, oracle_onset_frame) = oracle_onset(&height, fr, opts.smoothing_window);
        if (onset.max_knee_height_frame, onset.onset_frame) != (peak, oracle_onset_frame)
            || release != oracle_release(&wrist, fr, opts.smoothing_window)
        {
            mismatches += 1;
        }
        let shift = rng.gen_range(-5000..5000) as f64;
        let scale = [0.25, 0.5, 2.0, 4.0][rng.gen_range(0..4)];
        for transformed in [h.mapv(|v| v + shift), h.mapv(|v| v * scale)] {
            if detect_onset(transformed.view(), fr, opts).unwrap() != onset {
                variant_breaks += 1;
            }
        }
        for transformed in [wrist.mapv(|v| v + shift), wrist.mapv(|v| v * scale)] {
            if detect_release(transformed.view(), fr, opts).unwrap() != release {
                variant_breaks += 1;
            }
        }
    }
    verdict(
        6,
        "events",
        mismatches == 0 && variant_breaks == 0,
        format!("100 trajectories, {mismatches} oracle mismatches, {variant_breaks} invariance breaks"),
        started,
    );
}

// 7 ------------------------------------------------------------------------

fn small_config() -> ExperimentConfig {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/synthetic_small.toml");
    ExperimentConfig::load(&path).unwrap()
}

#[test]
fn c7_synthetic_end_to_end() {
    let started = Instant::now();
    let cfg = small_config();
    let dir = tempfile::tempdir().unwrap();
    let archive = dir.path().join("data");
    experiment::synth(&cfg.synth, 0, cfg.n_folds, cfg.fold_seed, &archive).unwrap();
    let layout = Layout::new(dir.path().join("out"));
    let outcomes = experiment::train(&cfg, &layout, &archive, None, 1).unwrap();
    let n = outcomes.len() as f64;
    let late_r2 = outcomes
        .iter()
        .map(|o| o.report.model.mean_r2_latter_half.unwrap_or(f64::NEG_INFINITY))
        .sum::<f64>()
        / n;
    let model_late = outcomes.iter().map(|o| o.report.model.late_rmse).sum::<f64>() / n;
    let base_late = outcomes.iter().map(|o| o.report.baseline.late_rmse).sum::<f64>() / n;
    let gain = 1.0 - model_late / base_late;
    let secs = started.elapsed().as_secs_f64();
    verdict(
        7,
        "synthetic",
        outcomes.len() == 10 && late_r2 > 0.8 && gain >= 0.3 && secs < 1800.0,
        format!(
            "10 folds x {} epochs, latter-half R² {late_r2:.4}, late RMSE {model_late:.4} vs baseline {base_late:.4} ({:.1}% lower)",
            cfg.train.epochs,
            100.0 * gain
        ),
        started,
    );
}

// 8 ------------------------------------------------------------------------

#[test]
fn c8_determinism_and_reload() {
    let started = Instant::now();
    let mut cfg = small_config();
    cfg.synth.n_trials = 40;
    cfg.synth.n_frames = 40;
    cfg.n_folds = 4;
    cfg.train.epochs = 15;
    let dir = tempfile::tempdir().unwrap();
    let archive = dir.path().join("data");
    experiment::synth(&cfg.synth, 8, cfg.n_folds, cfg.fold_seed, &archive).unwrap();

    let mut runs = Vec::new();
    for name in ["a", "b"] {
        let layout = Layout::new(dir.path().join(name));
        let out = experiment::train(&cfg, &layout, &archive, Some(2), 1).unwrap();
        runs.push((layout, out));
    }
    let final_a = runs[0].1[0].history.last().unwrap().total;
    let final_b = runs[1].1[0].history.last().unwrap().total;
    let ckpt_a = Checkpoint::load(&runs[0].1[0].checkpoint).unwrap();
    let ckpt_b = Checkpoint::load(&runs[1].1[0].checkpoint).unwrap();
    let identical = final_a == final_b && ckpt_a.tensors == ckpt_b.tensors;

    let (reports, _) = experiment::evaluate(&cfg, &runs[0].0, &archive, Some(2)).unwrap();
    let saved = ckpt_a.validation.unwrap();
    let again = ValidationMetrics::from(&reports[0]);
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-6;
    let opt_close = |a: Option<f64>, b: Option<f64>| match (a, b) {
        (Some(a), Some(b)) => close(a, b),
        (None, None) => true,
        _ => false,
    };
    let reload_ok = close(saved.overall_rmse, again.overall_rmse)
        && close(saved.late_rmse, again.late_rmse)
        && opt_close(saved.mean_r2_full, again.mean_r2_full)
        && opt_close(saved.mean_r2_latter_half, again.mean_r2_latter_half);
    verdict(
        8,
        "determinism",
        identical && reload_ok,
        format!("final loss {final_a:e} vs {final_b:e} (bound: bit-identical); reload RMSE {:e} vs {:e}", saved.overall_rmse, again.overall_rmse),
        started,
    );
}

// 9 ------------------------------------------------------------------------

#[test]
fn c9_standardization_hygiene() {
    let started = Instant::now();
    let (dataset, _) = synth_generate(
        &SynthConfig {
            n_trials: 30,
            n_frames: 20,
            ..Default::default()
        },
        9,
    )
    .unwrap();
    let folds = make_folds(dataset.len(), 5, 1).unwrap();
    let mut cfg = small_config();
    cfg.train.epochs = 0;
    let model = cfg.model();
    let mut rng = ChaCha8Rng::seed_from_u64(90);
    let mut ok = true;
    for fold in 0..5 {
        let (base, _) = train_fold::<f32>(&dataset, &folds, fold, &model, &cfg.train).unwrap();
        let mut mutated: MotionDataset = dataset.clone();
        for i in folds.test_indices(fold) {
            mutated.trials[i].mapv_inplace(|v| v * rng.gen_range(-50.0..50.0) + 1e4);
        }
        let (after, _) = train_fold::<f32>(&mutated, &folds, fold, &model, &cfg.train).unwrap();
        ok &= after.stats == base.stats;
        // mutating a training trial must be visible, or the check proves nothing
        let i = folds.train_indices(fold)[0];
        mutated.trials[i].mapv_inplace(|v| v + 1.0);
        ok &= fit_stats(folds.train_indices(fold).iter().map(|&i| &mutated.trials[i])).unwrap() != base.stats;
    }
    verdict(9, "standardization", ok, "5 folds, held-out trials mutated".into(), started);
}
