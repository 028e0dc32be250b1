use ndarray::{s, Array2};

use super::events::TrialEvents;
use super::schema::JointSchema;
use crate::error::{Error, Result};

/// One recorded trial, positions in millimetres.
#[derive(Clone, Debug, PartialEq)]
pub struct RawTrial {
    pub trial_id: String,
    pub frames: Array2<f64>,
    pub frame_rate: f64,
}

impl RawTrial {
    /// Rejects short trials, bad frame rates, wrong widths and non-finite samples.
    pub fn validate(&self, schema: &JointSchema) -> Result<()> {
        let bad = |reason: String| Error::InvalidTrial {
            trial: self.trial_id.clone(),
            reason,
        };
        if self.frames.nrows() < 2 {
            return Err(bad(format!("{} frames recorded, need at least 2", self.frames.nrows())));
        }
        if !(self.frame_rate > 0.0 && self.frame_rate.is_finite()) {
            return Err(bad(format!("frame rate {} must be positive", self.frame_rate)));
        }
        if self.frames.ncols() != schema.feature_dim() {
            return Err(bad(format!(
                "{} columns, schema expects {}",
                self.frames.ncols(),
                schema.feature_dim()
            )));
        }
        if let Some((idx, _)) = self.frames.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(bad(format!("non-finite sample at frame {}, column {}", idx.0, idx.1)));
        }
        Ok(())
    }
}

/// Fixed-length, aligned trials of one participant.
#[derive(Clone, Debug, PartialEq)]
pub struct MotionDataset {
    pub participant_id: String,
    pub joint_schema: JointSchema,
    pub frame_rate: f64,
    pub units: String,
    pub trial_ids: Vec<String>,
    pub trials: Vec<Array2<f64>>,
    /// Detected events per trial, in raw-recording frame indices; empty for
    /// datasets that were not windowed from recordings.
    pub events: Vec<TrialEvents>,
}

impl MotionDataset {
    pub fn validate(&self) -> Result<()> {
        let Some(first) = self.trials.first() else {
            return Err(Error::Contract("dataset has no trials".into()));
        };
        if self.trial_ids.len() != self.trials.len() {
            return Err(Error::Contract("trial ids and trials differ in count".into()));
        }
        if !self.events.is_empty() && self.events.len() != self.trials.len() {
            return Err(Error::Contract("events table and trials differ in count".into()));
        }
        let dim = first.dim();
        if dim.1 != self.joint_schema.feature_dim() {
            return Err(Error::Contract(format!(
                "trials have {} features, schema has {}",
                dim.1,
                self.joint_schema.feature_dim()
            )));
        }
        for (id, t) in self.trial_ids.iter().zip(&self.trials) {
            if t.dim() != dim {
                return Err(Error::Contract(format!("trial {id} has shape {:?}, expected {dim:?}", t.dim())));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.trials.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trials.is_empty()
    }

    /// Window length `T`.
    pub fn n_frames(&self) -> usize {
        self.trials.first().map_or(0, |t| t.nrows())
    }

    pub fn feature_dim(&self) -> usize {
        self.trials.first().map_or(0, |t| t.ncols())
    }

    pub fn select(&self, indices: &[usize]) -> Vec<&Array2<f64>> {
        indices.iter().map(|&i| &self.trials[i]).collect()
    }
}

/// Cuts every trial to a common window anchored at its own onset.
///
/// The window length is the longest onset-to-release span across trials,
/// so the latest-releasing trial ends exactly at release and the others
/// carry some follow-through.
pub fn align_and_window(
    participant_id: &str,
    schema: &JointSchema,
    raw_trials: &[RawTrial],
    events: &[TrialEvents],
) -> Result<MotionDataset> {
    if raw_trials.is_empty() || raw_trials.len() != events.len() {
        return Err(Error::Contract("need one events record per raw trial".into()));
    }
    for (trial, ev) in raw_trials.iter().zip(events) {
        if ev.onset_frame >= ev.release_frame {
            return Err(Error::InvalidTrial {
                trial: trial.trial_id.clone(),
                reason: format!("onset {} not before release {}", ev.onset_frame, ev.release_frame),
            });
        }
    }
    let window = events
        .iter()
        .map(|e| e.release_frame - e.onset_frame + 1)
        .max()
        .expect("non-empty");
    let trials = raw_trials
        .iter()
        .zip(events)
        .map(|(trial, ev)| {
            let end = ev.onset_frame + window;
            if trial.frames.nrows() < end {
                return Err(Error::Windowing {
                    trial: trial.trial_id.clone(),
                    needed: end,
                    got: trial.frames.nrows(),
                });
            }
            Ok(trial.frames.slice(s![ev.onset_frame..end, ..]).to_owned())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MotionDataset {
        participant_id: participant_id.to_string(),
        joint_schema: schema.clone(),
        frame_rate: raw_trials[0].frame_rate,
        units: "mm".into(),
        trial_ids: raw_trials.iter().map(|t| t.trial_id.clone()).collect(),
        trials,
        events: events.to_vec(),
    })
}
