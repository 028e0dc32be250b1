use std::path::Path;
use std::process::{Command, Output};

fn latentflow(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_latentflow"))
        .args(args)
        .env_remove("LATENTFLOW_WORKERS")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = latentflow(args);
    assert!(
        out.status.success(),
        "{args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

const TINY: &str = r#"
n_folds = 3
[encoder]
n_layers = 1
n_heads = 2
model_dim = 8
feedforward_dim = 16
n_tokens = 4
[vector_field]
hidden_dims = [8, 8]
[decoder]
hidden_dims = [16, 16]
[train]
epochs = 2
batch_size = 4
learning_rate = 1e-3
[synth]
n_trials = 12
n_frames = 16
"#;

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn help_documents_verbs_and_flags() {
    let help = ok(&["--help"]);
    for verb in ["ingest", "synth", "train", "eval", "reconstruct", "plot"] {
        assert!(help.contains(verb), "missing verb {verb}");
    }
    let train = ok(&["train", "--help"]);
    for flag in ["--config", "--data", "--out", "--seed", "--fold", "--workers"] {
        assert!(train.contains(flag), "missing flag {flag}");
    }
}

#[test]
fn full_workflow_on_synthetic_data() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("tiny.toml");
    std::fs::write(&cfg, TINY).unwrap();
    let data = dir.path().join("data");
    let out = dir.path().join("out");

    let s = ok(&["synth", "--config", p(&cfg), "--out", p(&data), "--seed", "3"]);
    assert!(s.contains("12 trials"), "{s}");
    assert!(data.join("ground_truth.json").exists());
    assert!(data.join("runs/synth.json").exists());

    let t = ok(&["train", "--config", p(&cfg), "--data", p(&data), "--out", p(&out), "--fold", "1"]);
    assert!(t.contains("fold  1"), "{t}");
    assert!(out.join("checkpoints/synthetic/fold_01.json").exists());
    assert!(!out.join("checkpoints/synthetic/fold_00.json").exists());

    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("runs/train.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "train");
    assert_eq!(manifest["config_sha256"].as_str().unwrap().len(), 64);
    assert_eq!(manifest["folds"], serde_json::json!([1]));

    let e = ok(&["eval", "--config", p(&cfg), "--data", p(&data), "--out", p(&out), "--fold", "1"]);
    assert!(e.contains("RMSE"), "{e}");
    assert!(out.join("reports/synthetic/fold_01_rmse.csv").exists());

    ok(&["reconstruct", "--config", p(&cfg), "--data", p(&data), "--out", p(&out), "--fold", "1"]);
    let recon = out.join("reconstructions/synthetic/fold_01");
    assert!(std::fs::read_dir(&recon).unwrap().count() >= 2);

    ok(&["plot", "--config", p(&cfg), "--data", p(&data), "--out", p(&out)]);
    let plots = out.join("plots/synthetic");
    for name in ["curves.svg", "latent_fold_01.svg"] {
        let svg = std::fs::read_to_string(plots.join(name)).unwrap();
        assert!(svg.starts_with("<svg"), "{name}");
    }
    assert!(std::fs::read_dir(&plots)
        .unwrap()
        .any(|e| e.unwrap().file_name().to_string_lossy().starts_with("stick_fold_01_")));
}

#[test]
fn bad_input_fails_cleanly() {
    let out = latentflow(&["train", "--fold", "first"]);
    assert!(!out.status.success());
    let out = latentflow(&["train", "--out", "/nonexistent/out"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("dataset archive"));
}
