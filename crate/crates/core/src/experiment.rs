//! Command implementations over an output root directory. Every artifact
//! path is a function of `(root, participant, fold)`.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::checkpoint::{Checkpoint, Precision, ValidationMetrics};
use crate::config::ExperimentConfig;
use crate::data::io::{read_archive, write_archive, write_text, write_trial_csv, ParticipantManifest};
use crate::data::{align_and_window, detect_events, make_folds, synth_generate, FoldAssignment, GroundTruth, MotionDataset, SynthConfig};
use crate::error::{Error, Result};
use crate::evaluation::{evaluate_fold, summarize, EvalReport, ParticipantSummary, Prediction};
use crate::scalar::Scalar;
use crate::train::{train_fold, TrainHistory};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Layout { root: root.into() }
    }

    fn fold_name(fold: usize) -> String {
        format!("fold_{fold:02}")
    }

    pub fn checkpoint(&self, participant: &str, fold: usize) -> PathBuf {
        self.root.join("checkpoints").join(participant).join(format!("{}.json", Self::fold_name(fold)))
    }

    pub fn history(&self, participant: &str, fold: usize) -> PathBuf {
        self.root.join("histories").join(participant).join(format!("{}.csv", Self::fold_name(fold)))
    }

    pub fn report(&self, participant: &str, fold: usize) -> PathBuf {
        self.root.join("reports").join(participant).join(format!("{}.json", Self::fold_name(fold)))
    }

    pub fn rmse_table(&self, participant: &str, fold: usize) -> PathBuf {
        self.root.join("reports").join(participant).join(format!("{}_rmse.csv", Self::fold_name(fold)))
    }

    pub fn r2_table(&self, participant: &str, fold: usize) -> PathBuf {
        self.root.join("reports").join(participant).join(format!("{}_r2.csv", Self::fold_name(fold)))
    }

    pub fn summary(&self, participant: &str) -> PathBuf {
        self.root.join("reports").join(participant).join("summary.json")
    }

    pub fn reconstructions(&self, participant: &str, fold: usize) -> PathBuf {
        self.root.join("reconstructions").join(participant).join(Self::fold_name(fold))
    }

    pub fn plots(&self, participant: &str) -> PathBuf {
        self.root.join("plots").join(participant)
    }

    pub fn run_manifest(&self, command: &str) -> PathBuf {
        self.root.join("runs").join(format!("{command}.json"))
    }
}

/// Provenance of one command invocation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: String,
    pub config_sha256: String,
    pub seed: u64,
    pub participant_id: Option<String>,
    pub folds: Vec<usize>,
    pub unix_time: u64,
}

impl RunManifest {
    pub fn new(command: &str, cfg: &ExperimentConfig, seed: u64, participant_id: Option<String>, folds: Vec<usize>) -> Result<Self> {
        Ok(RunManifest {
            command: command.into(),
            tool_version: env!("CARGO_PKG_VERSION").into(),
            config_sha256: cfg.hash()?,
            seed,
            participant_id,
            folds,
            unix_time: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
        })
    }

    pub fn save(&self, layout: &Layout) -> Result<()> {
        write_text(&layout.run_manifest(&self.command), &serde_json::to_string_pretty(self)?)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RejectedTrial {
    pub trial_id: String,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IngestReport {
    pub participant_id: String,
    pub n_listed: usize,
    pub n_kept: usize,
    pub n_frames: usize,
    pub rejected: Vec<RejectedTrial>,
    /// Trials whose onset fell back to the first frame.
    pub onset_warnings: Vec<String>,
}

/// Raw manifest → event detection → windowing → folds → dataset archive.
///
/// Trials that fail to load or whose events cannot be detected are skipped
/// and listed in the report; the archive holds the rest.
pub fn ingest(cfg: &ExperimentConfig, manifest_path: &Path, archive_dir: &Path) -> Result<IngestReport> {
    let manifest = ParticipantManifest::load(manifest_path)?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let mut rejected = Vec::new();
    let mut kept = Vec::new();
    let mut events = Vec::new();
    for (id, trial) in manifest.load_trials(base) {
        let outcome = trial.and_then(|t| detect_events(&t, &manifest.joint_schema, cfg.events).map(|e| (t, e)));
        match outcome {
            Ok((t, e)) => {
                kept.push(t);
                events.push(e);
            }
            Err(e) => {
                log::warn!("skipping trial {id}: {e}");
                rejected.push(RejectedTrial {
                    trial_id: id,
                    reason: e.to_string(),
                });
            }
        }
    }
    if kept.len() < cfg.n_folds {
        return Err(Error::Config(format!(
            "{} usable trials, fewer than the {} folds requested",
            kept.len(),
            cfg.n_folds
        )));
    }
    let dataset = align_and_window(&manifest.participant_id, &manifest.joint_schema, &kept, &events)?;
    let dataset = MotionDataset {
        units: manifest.units.clone(),
        ..dataset
    };
    let folds = make_folds(dataset.len(), cfg.n_folds, cfg.fold_seed)?;
    write_archive(archive_dir, &dataset, &folds)?;
    let report = IngestReport {
        participant_id: dataset.participant_id.clone(),
        n_listed: manifest.trials.len(),
        n_kept: dataset.len(),
        n_frames: dataset.n_frames(),
        rejected,
        onset_warnings: kept
            .iter()
            .zip(&events)
            .filter(|(_, e)| e.onset_warning)
            .map(|(t, _)| t.trial_id.clone())
            .collect(),
    };
    write_text(&archive_dir.join("ingest_report.json"), &serde_json::to_string_pretty(&report)?)?;
    Ok(report)
}

/// Generates a synthetic dataset archive plus a `ground_truth.json` sidecar.
pub fn synth(cfg: &SynthConfig, seed: u64, n_folds: usize, fold_seed: u64, archive_dir: &Path) -> Result<(MotionDataset, GroundTruth)> {
    let (dataset, truth) = synth_generate(cfg, seed)?;
    let folds = make_folds(dataset.len(), n_folds, fold_seed)?;
    write_archive(archive_dir, &dataset, &folds)?;
    write_text(&archive_dir.join("ground_truth.json"), &serde_json::to_string(&truth)?)?;
    Ok((dataset, truth))
}

/// One trained and evaluated fold.
#[derive(Clone, Debug)]
pub struct FoldOutcome {
    pub report: EvalReport,
    pub history: TrainHistory,
    pub checkpoint: PathBuf,
}

fn fold_list(folds: &FoldAssignment, only: Option<usize>) -> Result<Vec<usize>> {
    match only {
        Some(f) => {
            folds.check_fold(f)?;
            Ok(vec![f])
        }
        None => Ok((0..folds.n_folds).collect()),
    }
}

fn write_report(layout: &Layout, report: &EvalReport) -> Result<()> {
    let p = &report.participant_id;
    write_text(&layout.report(p, report.fold_id), &serde_json::to_string_pretty(report)?)?;
    write_text(&layout.rmse_table(p, report.fold_id), &report.rmse_csv())?;
    write_text(&layout.r2_table(p, report.fold_id), &report.r2_csv())
}

fn train_one<S: Scalar>(
    cfg: &ExperimentConfig,
    layout: &Layout,
    dataset: &MotionDataset,
    folds: &FoldAssignment,
    fold: usize,
) -> Result<FoldOutcome> {
    let (trained, history) = train_fold::<S>(dataset, folds, fold, &cfg.model(), &cfg.train)?;
    let (report, _) = evaluate_fold(
        &trained.model,
        &trained.stats,
        dataset,
        fold,
        &folds.test_indices(fold),
        &folds.train_indices(fold),
        cfg.r2_centering,
    )?;
    let ckpt = Checkpoint::from_fold(&trained, &dataset.participant_id, dataset.n_frames(), Some(ValidationMetrics::from(&report)));
    let path = layout.checkpoint(&dataset.participant_id, fold);
    ckpt.save(&path)?;
    write_text(&layout.history(&dataset.participant_id, fold), &history.to_csv())?;
    write_report(layout, &report)?;
    Ok(FoldOutcome {
        report,
        history,
        checkpoint: path,
    })
}

/// Trains (and immediately evaluates) one fold or all folds of an archive.
///
/// Up to `workers` folds train concurrently; each fold's result depends
/// only on the config and fold id, so the worker count does not change it.
pub fn train(
    cfg: &ExperimentConfig,
    layout: &Layout,
    archive_dir: &Path,
    only_fold: Option<usize>,
    workers: usize,
) -> Result<Vec<FoldOutcome>> {
    let (dataset, folds) = read_archive(archive_dir)?;
    let fold_ids = fold_list(&folds, only_fold)?;
    let run = |fold: usize| -> Result<FoldOutcome> {
        log::info!("training fold {fold} of {}", folds.n_folds);
        match cfg.precision {
            Precision::F32 => train_one::<f32>(cfg, layout, &dataset, &folds, fold),
            Precision::F64 => train_one::<f64>(cfg, layout, &dataset, &folds, fold),
        }
    };
    let workers = workers.clamp(1, fold_ids.len());
    let outcomes: Vec<FoldOutcome> = if workers == 1 {
        fold_ids.iter().map(|&f| run(f)).collect::<Result<_>>()?
    } else {
        let next = AtomicUsize::new(0);
        let slots: Vec<Mutex<Option<Result<FoldOutcome>>>> = fold_ids.iter().map(|_| Mutex::new(None)).collect();
        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    let Some(&fold) = fold_ids.get(i) else { break };
                    let result = run(fold);
                    *slots[i].lock().expect("fold slot") = Some(result);
                });
            }
        });
        slots
            .into_iter()
            .map(|m| m.into_inner().expect("fold slot").expect("every fold ran"))
            .collect::<Result<_>>()?
    };
    if only_fold.is_none() {
        let reports: Vec<_> = outcomes.iter().map(|o| o.report.clone()).collect();
        write_text(&layout.summary(&dataset.participant_id), &serde_json::to_string_pretty(&summarize(&reports)?)?)?;
    }
    Ok(outcomes)
}

/// Loads a fold checkpoint and predicts every listed trial.
pub fn predict_fold(ckpt: &Checkpoint, dataset: &MotionDataset, folds: &FoldAssignment, centering: crate::evaluation::R2Centering) -> Result<(EvalReport, Vec<Prediction>)> {
    if ckpt.participant_id != dataset.participant_id {
        return Err(Error::Contract(format!(
            "checkpoint belongs to participant {}, dataset to {}",
            ckpt.participant_id, dataset.participant_id
        )));
    }
    let test = folds.test_indices(ckpt.fold_id);
    let train = folds.train_indices(ckpt.fold_id);
    match ckpt.precision {
        Precision::F32 => evaluate_fold(&ckpt.to_model::<f32>()?, &ckpt.stats, dataset, ckpt.fold_id, &test, &train, centering),
        Precision::F64 => evaluate_fold(&ckpt.to_model::<f64>()?, &ckpt.stats, dataset, ckpt.fold_id, &test, &train, centering),
    }
}

/// Re-evaluates saved checkpoints and writes per-fold reports and the summary.
pub fn evaluate(cfg: &ExperimentConfig, layout: &Layout, archive_dir: &Path, only_fold: Option<usize>) -> Result<(Vec<EvalReport>, ParticipantSummary)> {
    let (dataset, folds) = read_archive(archive_dir)?;
    let fold_ids = fold_list(&folds, only_fold)?;
    let mut reports = Vec::with_capacity(fold_ids.len());
    for &fold in &fold_ids {
        let ckpt = Checkpoint::load(&layout.checkpoint(&dataset.participant_id, fold))?;
        let (report, _) = predict_fold(&ckpt, &dataset, &folds, cfg.r2_centering)?;
        write_report(layout, &report)?;
        reports.push(report);
    }
    let summary = summarize(&reports)?;
    if only_fold.is_none() {
        write_text(&layout.summary(&dataset.participant_id), &serde_json::to_string_pretty(&summary)?)?;
    }
    Ok((reports, summary))
}

/// Writes predicted trajectories (original units) and latent paths for the
/// held-out trials of one fold.
pub fn reconstruct(cfg: &ExperimentConfig, layout: &Layout, archive_dir: &Path, fold: usize) -> Result<Vec<Prediction>> {
    let (dataset, folds) = read_archive(archive_dir)?;
    folds.check_fold(fold)?;
    let ckpt = Checkpoint::load(&layout.checkpoint(&dataset.participant_id, fold))?;
    let (_, predictions) = predict_fold(&ckpt, &dataset, &folds, cfg.r2_centering)?;
    let dir = layout.reconstructions(&dataset.participant_id, fold);
    for p in &predictions {
        write_trial_csv(&dir.join(format!("{}_pred.csv", p.trial_id)), &dataset.joint_schema, &p.predicted)?;
        write_text(&dir.join(format!("{}_latent.csv", p.trial_id)), &latent_csv(&p.latent.states))?;
    }
    Ok(predictions)
}

fn latent_csv(states: &ndarray::Array2<f64>) -> String {
    let d = states.ncols();
    let mut out = String::from("frame");
    for j in 0..d {
        out.push_str(&format!(",z{j}"));
    }
    out.push('\n');
    for (t, row) in states.outer_iter().enumerate() {
        out.push_str(&t.to_string());
        for v in row {
            out.push(',');
            out.push_str(&crate::data::io::fmt_num(*v));
        }
        out.push('\n');
    }
    out
}
