//! Raw recordings through ingest, training, evaluation and reconstruction.

use std::path::Path;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use latentflow::data::io::{read_archive, write_trial_csv, ParticipantManifest, TrialEntry};
use latentflow::data::{detect_events, EventOptions, JointSchema, RawTrial};
use latentflow::experiment::{self, Layout};
use latentflow::*;

/// Knee lifts to a peak, then the wrist whips through release.
fn raw_trial(rng: &mut ChaCha8Rng, schema: &JointSchema) -> Array2<f64> {
    let n = rng.gen_range(90..130);
    let rest = rng.gen_range(8..20);
    let peak = rest + rng.gen_range(20..35);
    let release = peak + rng.gen_range(15..30);
    let knee = schema.columns("l_knee").unwrap().start + schema.vertical_axis;
    let wrist = schema.columns("r_wrist").unwrap();
    let phase: Vec<f64> = (0..45).map(|_| rng.gen_range(0.0..6.0)).collect();
    Array2::from_shape_fn((n, 45), |(t, c)| {
        let tf = t as f64;
        if c == knee {
            let lift = if t < rest {
                0.0
            } else if t <= peak {
                0.5 - 0.5 * (std::f64::consts::PI * (t - rest) as f64 / (peak - rest) as f64).cos()
            } else {
                (-((t - peak) as f64) / 12.0).exp()
            };
            500.0 + 300.0 * lift
        } else if wrist.contains(&c) {
            800.0 * (1.0 + ((tf - release as f64) / 5.0).tanh()) + 10.0 * (c as f64)
        } else {
            1000.0 + 40.0 * (0.05 * tf + phase[c]).sin()
        }
    })
}

fn write_participant(dir: &Path, n: usize) -> (ParticipantManifest, Vec<RawTrial>) {
    let schema = JointSchema::default();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut trials = Vec::new();
    let mut entries = Vec::new();
    for i in 0..n {
        let id = format!("t{i:02}");
        let mut frames = raw_trial(&mut rng, &schema);
        if i == 3 {
            frames[[5, 7]] = f64::NAN;
        }
        write_trial_csv(&dir.join(format!("{id}.csv")), &schema, &frames).unwrap();
        entries.push(TrialEntry {
            id: id.clone(),
            file: format!("{id}.csv").into(),
        });
        trials.push(RawTrial {
            trial_id: id,
            frames,
            frame_rate: 200.0,
        });
    }
    let manifest = ParticipantManifest {
        participant_id: "sub01".into(),
        frame_rate: 200.0,
        units: "mm".into(),
        joint_schema: schema,
        trials: entries,
    };
    manifest.save(&dir.join("manifest.toml")).unwrap();
    (manifest, trials)
}

fn tiny_config() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.n_folds = 3;
    cfg.encoder.n_layers = 1;
    cfg.encoder.n_heads = 2;
    cfg.encoder.model_dim = 8;
    cfg.encoder.feedforward_dim = 16;
    cfg.encoder.n_tokens = 4;
    cfg.vector_field.hidden_dims = vec![8, 8];
    cfg.decoder.hidden_dims = vec![16, 16];
    cfg.train.epochs = 3;
    cfg.train.batch_size = 4;
    cfg.train.learning_rate = 1e-3;
    cfg
}

#[test]
fn ingest_windows_at_onset_and_reports_bad_trials() {
    let dir = tempfile::tempdir().unwrap();
    let (_, raw) = write_participant(dir.path(), 10);
    let cfg = tiny_config();
    let archive = dir.path().join("archive");
    let report = experiment::ingest(&cfg, &dir.path().join("manifest.toml"), &archive).unwrap();
    assert_eq!(report.n_listed, 10);
    assert_eq!(report.n_kept, 9);
    assert_eq!(report.rejected.len(), 1);
    assert_eq!(report.rejected[0].trial_id, "t03");

    let (dataset, folds) = read_archive(&archive).unwrap();
    assert_eq!(folds.n_folds, 3);
    let good: Vec<_> = raw.iter().filter(|t| t.trial_id != "t03").collect();
    let events: Vec<_> = good
        .iter()
        .map(|t| detect_events(t, &dataset.joint_schema, EventOptions::default()).unwrap())
        .collect();
    let window = events.iter().map(|e| e.release_frame - e.onset_frame + 1).max().unwrap();
    assert_eq!(dataset.n_frames(), window);
    assert_eq!(report.n_frames, window);
    for ((trial, ev), windowed) in good.iter().zip(&events).zip(&dataset.trials) {
        assert!(ev.onset_frame < ev.max_knee_height_frame && ev.max_knee_height_frame < ev.release_frame);
        assert_eq!(windowed.row(0), trial.frames.row(ev.onset_frame));
    }
    assert_eq!(dataset.events, events);
}

#[test]
fn worker_count_does_not_change_results() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config();
    let archive = dir.path().join("archive");
    let synth = latentflow::data::SynthConfig {
        n_trials: 12,
        n_frames: 16,
        ..Default::default()
    };
    experiment::synth(&synth, 1, cfg.n_folds, cfg.fold_seed, &archive).unwrap();
    let serial = Layout::new(dir.path().join("serial"));
    let parallel = Layout::new(dir.path().join("parallel"));
    let a = experiment::train(&cfg, &serial, &archive, None, 1).unwrap();
    let b = experiment::train(&cfg, &parallel, &archive, None, 2).unwrap();
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x.report, y.report);
        assert_eq!(
            Checkpoint::load(&x.checkpoint).unwrap().tensors,
            Checkpoint::load(&y.checkpoint).unwrap().tensors
        );
    }
    assert!(serial.summary("synthetic").exists());

    let (reports, summary) = experiment::evaluate(&cfg, &serial, &archive, None).unwrap();
    assert_eq!(reports.len(), 3);
    assert_eq!(summary.folds, vec![0, 1, 2]);
    assert_eq!(reports[1], a[1].report);

    let predictions = experiment::reconstruct(&cfg, &serial, &archive, 1).unwrap();
    let out = serial.reconstructions("synthetic", 1);
    for p in &predictions {
        assert!(out.join(format!("{}_pred.csv", p.trial_id)).exists());
        assert!(out.join(format!("{}_latent.csv", p.trial_id)).exists());
    }
}
