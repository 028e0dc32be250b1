//! On-disk formats: per-trial CSV files, participant manifests and the
//! windowed dataset archive.
//!
//! Archive layout:
//!
//! ```text
//! <dir>/manifest.json      participant, schema, frame rate, units, T, trial ids
//! <dir>/trials/<id>.csv    T × 45 matrix with a `frame, <joint>_x, ...` header
//! <dir>/events.csv         trial_id, max_knee_height, onset, release
//! <dir>/folds.csv          trial_id, fold
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::events::TrialEvents;
use super::folds::FoldAssignment;
use super::schema::JointSchema;
use super::window::{MotionDataset, RawTrial};
use crate::error::{Error, Result};

pub const ARCHIVE_FORMAT_VERSION: u32 = 1;

/// Fixed scientific formatting with 17 significant digits (exact for f64).
pub fn fmt_num(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Reads a trial table; the leading `frame` column is checked and dropped.
pub fn read_trial_csv(path: &Path, schema: &JointSchema) -> Result<Array2<f64>> {
    let what = || path.display().to_string();
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::format(what(), e.to_string()))?;
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    if header != schema.header() {
        return Err(Error::format(what(), "header does not match the joint schema"));
    }
    let width = schema.feature_dim();
    let mut values = Vec::new();
    let mut rows = 0;
    for record in reader.records() {
        let record = record?;
        for field in record.iter().skip(1) {
            let v: f64 = field
                .parse()
                .map_err(|_| Error::format(what(), format!("row {rows}: cannot parse {field:?}")))?;
            values.push(v);
        }
        if values.len() != (rows + 1) * width {
            return Err(Error::format(what(), format!("row {rows} has the wrong number of fields")));
        }
        rows += 1;
    }
    Array2::from_shape_vec((rows, width), values).map_err(|e| Error::format(what(), e.to_string()))
}

pub fn write_trial_csv(path: &Path, schema: &JointSchema, frames: &Array2<f64>) -> Result<()> {
    let mut out = schema.header().join(",");
    out.push('\n');
    for (t, row) in frames.outer_iter().enumerate() {
        out.push_str(&t.to_string());
        for &v in row {
            out.push(',');
            out.push_str(&fmt_num(v));
        }
        out.push('\n');
    }
    write_text(path, &out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialEntry {
    pub id: String,
    pub file: PathBuf,
}

/// Participant manifest listing raw trial files (TOML, or JSON by extension).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParticipantManifest {
    pub participant_id: String,
    #[serde(default = "default_frame_rate")]
    pub frame_rate: f64,
    #[serde(default = "default_units")]
    pub units: String,
    #[serde(flatten)]
    pub joint_schema: JointSchema,
    pub trials: Vec<TrialEntry>,
}

fn default_frame_rate() -> f64 {
    200.0
}

fn default_units() -> String {
    "mm".into()
}

fn is_json(path: &Path) -> bool {
    path.extension().is_some_and(|e| e == "json")
}

impl ParticipantManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = read_text(path)?;
        let manifest: ParticipantManifest = if is_json(path) {
            serde_json::from_str(&text)?
        } else {
            toml::from_str(&text).map_err(|e| Error::format(path.display().to_string(), e.to_string()))?
        };
        manifest.joint_schema.validate()?;
        Ok(manifest)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = if is_json(path) {
            serde_json::to_string_pretty(self)?
        } else {
            toml::to_string_pretty(self).map_err(|e| Error::format("manifest", e.to_string()))?
        };
        write_text(path, &text)
    }

    /// Loads and validates every listed trial; paths are relative to `base_dir`.
    /// Returns each trial's outcome so callers can report all failures.
    pub fn load_trials(&self, base_dir: &Path) -> Vec<(String, Result<RawTrial>)> {
        self.trials
            .iter()
            .map(|entry| {
                let path = base_dir.join(&entry.file);
                let trial = read_trial_csv(&path, &self.joint_schema)
                    .map(|frames| RawTrial {
                        trial_id: entry.id.clone(),
                        frames,
                        frame_rate: self.frame_rate,
                    })
                    .and_then(|t| t.validate(&self.joint_schema).map(|_| t));
                (entry.id.clone(), trial)
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchiveManifest {
    pub format_version: u32,
    pub participant_id: String,
    pub frame_rate: f64,
    pub units: String,
    pub n_frames: usize,
    pub joint_schema: JointSchema,
    pub trial_ids: Vec<String>,
    pub n_folds: usize,
    pub fold_seed: u64,
}

fn trial_file(dir: &Path, id: &str) -> PathBuf {
    dir.join("trials").join(format!("{id}.csv"))
}

/// Writes a windowed dataset and its fold assignment.
pub fn write_archive(dir: &Path, dataset: &MotionDataset, folds: &FoldAssignment) -> Result<()> {
    dataset.validate()?;
    if folds.n_trials() != dataset.len() {
        return Err(Error::Contract("fold assignment does not cover the dataset".into()));
    }
    for id in &dataset.trial_ids {
        if id.is_empty() || id.contains(['/', '\\']) || id.starts_with('.') {
            return Err(Error::Contract(format!("trial id {id:?} is not a valid file name")));
        }
    }
    let manifest = ArchiveManifest {
        format_version: ARCHIVE_FORMAT_VERSION,
        participant_id: dataset.participant_id.clone(),
        frame_rate: dataset.frame_rate,
        units: dataset.units.clone(),
        n_frames: dataset.n_frames(),
        joint_schema: dataset.joint_schema.clone(),
        trial_ids: dataset.trial_ids.clone(),
        n_folds: folds.n_folds,
        fold_seed: folds.seed,
    };
    write_text(&dir.join("manifest.json"), &serde_json::to_string_pretty(&manifest)?)?;
    for (id, frames) in dataset.trial_ids.iter().zip(&dataset.trials) {
        write_trial_csv(&trial_file(dir, id), &dataset.joint_schema, frames)?;
    }

    let mut events = String::from("trial_id,max_knee_height,onset,release,onset_warning\n");
    for (id, ev) in dataset.trial_ids.iter().zip(&dataset.events) {
        events.push_str(&format!(
            "{id},{},{},{},{}\n",
            ev.max_knee_height_frame, ev.onset_frame, ev.release_frame, ev.onset_warning
        ));
    }
    write_text(&dir.join("events.csv"), &events)?;

    let mut fold_table = String::from("trial_id,fold\n");
    for (id, f) in dataset.trial_ids.iter().zip(&folds.fold_of_trial) {
        fold_table.push_str(&format!("{id},{f}\n"));
    }
    write_text(&dir.join("folds.csv"), &fold_table)
}

#[derive(Deserialize)]
struct EventRow {
    trial_id: String,
    max_knee_height: usize,
    onset: usize,
    release: usize,
    #[serde(default)]
    onset_warning: bool,
}

#[derive(Deserialize)]
struct FoldRow {
    trial_id: String,
    fold: usize,
}

pub fn read_archive(dir: &Path) -> Result<(MotionDataset, FoldAssignment)> {
    let manifest: ArchiveManifest = serde_json::from_str(&read_text(&dir.join("manifest.json"))?)?;
    if manifest.format_version != ARCHIVE_FORMAT_VERSION {
        return Err(Error::format(
            "dataset archive",
            format!("unsupported format version {}", manifest.format_version),
        ));
    }
    manifest.joint_schema.validate()?;
    let trials = manifest
        .trial_ids
        .iter()
        .map(|id| read_trial_csv(&trial_file(dir, id), &manifest.joint_schema))
        .collect::<Result<Vec<_>>>()?;

    let position = |id: &str| -> Result<usize> {
        manifest
            .trial_ids
            .iter()
            .position(|t| t == id)
            .ok_or_else(|| Error::format("dataset archive", format!("unknown trial id {id}")))
    };

    let mut events = Vec::new();
    let events_path = dir.join("events.csv");
    if events_path.exists() {
        let mut rows: Vec<Option<TrialEvents>> = vec![None; manifest.trial_ids.len()];
        for row in csv::Reader::from_path(&events_path)?.deserialize::<EventRow>() {
            let row = row?;
            rows[position(&row.trial_id)?] = Some(TrialEvents {
                max_knee_height_frame: row.max_knee_height,
                onset_frame: row.onset,
                release_frame: row.release,
                onset_warning: row.onset_warning,
            });
        }
        if rows.iter().all(Option::is_some) {
            events = rows.into_iter().flatten().collect();
        } else if rows.iter().any(Option::is_some) {
            return Err(Error::format("events table", "some trials have no events row"));
        }
    }

    let mut fold_of_trial = vec![usize::MAX; manifest.trial_ids.len()];
    for row in csv::Reader::from_path(dir.join("folds.csv"))?.deserialize::<FoldRow>() {
        let row = row?;
        if row.fold >= manifest.n_folds {
            return Err(Error::format("fold table", format!("fold {} out of range", row.fold)));
        }
        fold_of_trial[position(&row.trial_id)?] = row.fold;
    }
    if fold_of_trial.contains(&usize::MAX) {
        return Err(Error::format("fold table", "some trials have no fold"));
    }

    let dataset = MotionDataset {
        participant_id: manifest.participant_id,
        joint_schema: manifest.joint_schema,
        frame_rate: manifest.frame_rate,
        units: manifest.units,
        trial_ids: manifest.trial_ids,
        trials,
        events,
    };
    dataset.validate()?;
    if dataset.n_frames() != manifest.n_frames {
        return Err(Error::format("dataset archive", "trial length differs from the manifest"));
    }
    Ok((
        dataset,
        FoldAssignment {
            n_folds: manifest.n_folds,
            fold_of_trial,
            seed: manifest.fold_seed,
        },
    ))
}
