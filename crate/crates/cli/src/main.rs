mod plot;

use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use latentflow::data::io::read_archive;
use latentflow::evaluation::{summarize, EvalReport};
use latentflow::experiment::{self, Layout, RunManifest};
use latentflow::{Checkpoint, ExperimentConfig};

/// Environment variable overriding the number of folds trained concurrently.
const WORKERS_ENV: &str = "LATENTFLOW_WORKERS";

#[derive(Parser, Debug)]
#[command(name = "latentflow", version, about = "Latent neural-ODE model of throwing motion")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Experiment config (TOML). Built-in defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Input: the participant manifest for `ingest`, a dataset archive for
    /// every other verb. Falls back to the config's `[data]` paths.
    #[arg(long, global = true)]
    data: Option<PathBuf>,

    /// Output directory: the dataset archive for `ingest` and `synth`, the
    /// experiment root for every other verb.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Seed: generator seed for `synth`, training seed otherwise (overrides
    /// `train.seed`).
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Fold index, or `all`.
    #[arg(long, global = true, default_value = "all")]
    fold: FoldArg,

    /// More log output; repeat for more detail.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Detect events, window and fold raw trials into a dataset archive.
    Ingest,
    /// Generate a synthetic dataset archive with a ground-truth sidecar.
    Synth,
    /// Train folds, evaluate each on its held-out trials and save checkpoints.
    Train {
        /// Folds trained concurrently (default: $LATENTFLOW_WORKERS or 1).
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Re-evaluate saved checkpoints and write reports and the summary.
    Eval,
    /// Write reconstructed trajectories and latent paths of held-out trials.
    Reconstruct,
    /// Draw error curves, latent paths and stick figures as SVG.
    Plot {
        /// Stick-figure panels per trial.
        #[arg(long, default_value_t = 6)]
        panels: usize,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum FoldArg {
    All,
    One(usize),
}

impl FromStr for FoldArg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.eq_ignore_ascii_case("all") {
            return Ok(FoldArg::All);
        }
        s.parse()
            .map(FoldArg::One)
            .map_err(|_| format!("expected a fold index or `all`, got {s:?}"))
    }
}

impl FoldArg {
    fn only(self) -> Option<usize> {
        match self {
            FoldArg::All => None,
            FoldArg::One(f) => Some(f),
        }
    }
}

fn load_config(path: Option<&Path>) -> Result<ExperimentConfig> {
    match path {
        Some(p) => ExperimentConfig::load(p).with_context(|| format!("reading config {}", p.display())),
        None => Ok(ExperimentConfig::default()),
    }
}

fn required(flag: Option<&PathBuf>, fallback: Option<&PathBuf>, what: &str) -> Result<PathBuf> {
    match flag.or(fallback) {
        Some(p) => Ok(p.clone()),
        None => bail!("no {what} given; pass it on the command line or set it in the config"),
    }
}

fn workers(flag: Option<usize>) -> Result<usize> {
    if let Some(w) = flag {
        return Ok(w.max(1));
    }
    match std::env::var(WORKERS_ENV) {
        Ok(v) => v
            .parse::<usize>()
            .map(|w| w.max(1))
            .with_context(|| format!("{WORKERS_ENV}={v:?} is not a count")),
        Err(_) => Ok(1),
    }
}

fn fold_ids(reports: &[EvalReport]) -> Vec<usize> {
    reports.iter().map(|r| r.fold_id).collect()
}

fn print_report(r: &EvalReport) {
    let opt = |v: Option<f64>| v.map_or("undefined".to_string(), |v| format!("{v:.4}"));
    println!(
        "fold {:>2}: RMSE {:.4} (baseline {:.4}), R² {} (baseline {}), latter-half R² {}",
        r.fold_id,
        r.model.overall_rmse,
        r.baseline.overall_rmse,
        opt(r.model.mean_r2_full),
        opt(r.baseline.mean_r2_full),
        opt(r.model.mean_r2_latter_half),
    );
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = load_config(cli.config.as_deref())?;
    if let (Some(seed), false) = (cli.seed, matches!(cli.command, Command::Synth)) {
        cfg.train.seed = seed;
    }
    match cli.command {
        Command::Ingest => {
            let manifest = required(cli.data.as_ref(), cfg.data.manifest.as_ref(), "participant manifest (--data)")?;
            let archive = required(cli.out.as_ref(), cfg.data.archive.as_ref(), "archive directory (--out)")?;
            let report = experiment::ingest(&cfg, &manifest, &archive)?;
            RunManifest::new("ingest", &cfg, cfg.fold_seed, Some(report.participant_id.clone()), Vec::new())?
                .save(&Layout::new(&archive))?;
            println!(
                "{}: kept {} of {} trials, window {} frames",
                report.participant_id, report.n_kept, report.n_listed, report.n_frames
            );
            for r in &report.rejected {
                println!("rejected {}: {}", r.trial_id, r.reason);
            }
            for id in &report.onset_warnings {
                println!("warning: onset of {id} fell back to the first frame");
            }
        }
        Command::Synth => {
            let archive = required(cli.out.as_ref(), cfg.data.archive.as_ref(), "archive directory (--out)")?;
            let seed = cli.seed.unwrap_or(0);
            let (dataset, _) = experiment::synth(&cfg.synth, seed, cfg.n_folds, cfg.fold_seed, &archive)?;
            RunManifest::new("synth", &cfg, seed, Some(dataset.participant_id.clone()), Vec::new())?
                .save(&Layout::new(&archive))?;
            println!(
                "wrote {} trials of {} frames to {}",
                dataset.len(),
                dataset.n_frames(),
                archive.display()
            );
        }
        Command::Train { workers: w } => {
            let archive = required(cli.data.as_ref(), cfg.data.archive.as_ref(), "dataset archive (--data)")?;
            let root = required(cli.out.as_ref(), None, "output directory (--out)")?;
            let layout = Layout::new(&root);
            let outcomes = experiment::train(&cfg, &layout, &archive, cli.fold.only(), workers(w)?)?;
            let reports: Vec<_> = outcomes.iter().map(|o| o.report.clone()).collect();
            RunManifest::new("train", &cfg, cfg.train.seed, reports.first().map(|r| r.participant_id.clone()), fold_ids(&reports))?
                .save(&layout)?;
            reports.iter().for_each(print_report);
        }
        Command::Eval => {
            let archive = required(cli.data.as_ref(), cfg.data.archive.as_ref(), "dataset archive (--data)")?;
            let root = required(cli.out.as_ref(), None, "output directory (--out)")?;
            let layout = Layout::new(&root);
            let (reports, summary) = experiment::evaluate(&cfg, &layout, &archive, cli.fold.only())?;
            RunManifest::new("eval", &cfg, cfg.train.seed, Some(summary.participant_id.clone()), fold_ids(&reports))?
                .save(&layout)?;
            reports.iter().for_each(print_report);
            if let (Some(r), Some(b)) = (summary.model.overall_rmse, summary.baseline.overall_rmse) {
                println!("RMSE across folds: {:.4} ± {:.4} (baseline {:.4} ± {:.4})", r.mean, r.sd, b.mean, b.sd);
            }
            if let Some(r2) = summary.model.mean_r2_latter_half {
                println!("latter-half R² across folds: {:.4} ± {:.4}", r2.mean, r2.sd);
            }
        }
        Command::Reconstruct => {
            let archive = required(cli.data.as_ref(), cfg.data.archive.as_ref(), "dataset archive (--data)")?;
            let root = required(cli.out.as_ref(), None, "output directory (--out)")?;
            let layout = Layout::new(&root);
            let (dataset, folds) = read_archive(&archive)?;
            let selected: Vec<usize> = match cli.fold.only() {
                Some(f) => vec![f],
                None => (0..folds.n_folds).collect(),
            };
            for &fold in &selected {
                let predictions = experiment::reconstruct(&cfg, &layout, &archive, fold)?;
                println!(
                    "fold {fold}: {} trials written to {}",
                    predictions.len(),
                    layout.reconstructions(&dataset.participant_id, fold).display()
                );
            }
            RunManifest::new("reconstruct", &cfg, cfg.train.seed, Some(dataset.participant_id.clone()), selected)?
                .save(&layout)?;
        }
        Command::Plot { panels } => {
            let archive = required(cli.data.as_ref(), cfg.data.archive.as_ref(), "dataset archive (--data)")?;
            let root = required(cli.out.as_ref(), None, "output directory (--out)")?;
            let layout = Layout::new(&root);
            let (dataset, folds) = read_archive(&archive)?;
            let participant = &dataset.participant_id;
            let dir = layout.plots(participant);
            std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;

            let selected: Vec<usize> = match cli.fold.only() {
                Some(f) => vec![f],
                None => (0..folds.n_folds)
                    .filter(|&f| layout.checkpoint(participant, f).exists())
                    .collect(),
            };
            if selected.is_empty() {
                bail!("no checkpoints under {}; run `train` first", root.display());
            }
            let mut reports = Vec::new();
            for &fold in &selected {
                let ckpt = Checkpoint::load(&layout.checkpoint(participant, fold))?;
                let (report, predictions) = experiment::predict_fold(&ckpt, &dataset, &folds, cfg.r2_centering)?;
                let latent = dir.join(format!("latent_fold_{fold:02}.svg"));
                plot::latent(&predictions, &format!("{participant} fold {fold}: latent paths"), &latent)?;
                if let Some(first) = predictions.first() {
                    let stick = dir.join(format!("stick_fold_{fold:02}_{}.svg", first.trial_id));
                    plot::stick_figure(&dataset.joint_schema, first, panels, &stick)?;
                }
                reports.push(report);
            }
            let summary = summarize(&reports)?;
            plot::curves(&summary, &dataset.units, &dir.join("curves.svg"))?;
            RunManifest::new("plot", &cfg, cfg.train.seed, Some(participant.clone()), selected)?.save(&layout)?;
            println!("figures written to {}", dir.display());
        }
    }
    Ok(())
}

fn main() {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Err(e) = run(cli) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
