//! Kinematic event detection: motion onset from the lead knee, ball release
//! from the throwing wrist.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use super::schema::JointSchema;
use super::window::RawTrial;
use crate::error::{Error, Result};

/// Fraction of the peak upward knee velocity that marks motion onset.
pub const ONSET_FRACTION: f64 = 0.05;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EventOptions {
    /// Centered moving-average window applied to velocities before
    /// thresholding; 1 disables smoothing.
    pub smoothing_window: usize,
}

impl Default for EventOptions {
    fn default() -> Self {
        EventOptions { smoothing_window: 5 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialEvents {
    pub max_knee_height_frame: usize,
    pub onset_frame: usize,
    pub release_frame: usize,
    /// Set when no sub-threshold frame preceded the rise and onset fell back to 0.
    #[serde(default)]
    pub onset_warning: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct OnsetDetection {
    pub max_knee_height_frame: usize,
    pub onset_frame: usize,
    pub warning: bool,
}

/// Per-column time derivative: central differences inside, one-sided at the ends.
fn differentiate(series: ArrayView2<'_, f64>, frame_rate: f64) -> Result<Array2<f64>> {
    let t = series.nrows();
    if t < 3 {
        return Err(Error::InputTooShort { needed: 3, got: t });
    }
    let mut out = Array2::zeros(series.dim());
    for c in 0..series.ncols() {
        let x = series.column(c);
        out[[0, c]] = (x[1] - x[0]) * frame_rate;
        for i in 1..t - 1 {
            out[[i, c]] = (x[i + 1] - x[i - 1]) * (frame_rate / 2.0);
        }
        out[[t - 1, c]] = (x[t - 1] - x[t - 2]) * frame_rate;
    }
    Ok(out)
}

/// Centered moving average with the window truncated at the boundaries.
pub fn moving_average(x: ArrayView1<'_, f64>, window: usize) -> Array1<f64> {
    if window <= 1 {
        return x.to_owned();
    }
    let r = window / 2;
    let n = x.len();
    (0..n)
        .map(|i| {
            let lo = i.saturating_sub(r);
            let hi = (i + r).min(n - 1);
            x.slice(ndarray::s![lo..=hi]).sum() / (hi - lo + 1) as f64
        })
        .collect()
}

/// Speed ‖v(t)‖₂ of a `T × 3` position series, in position units per second.
pub fn compute_speed(series: ArrayView2<'_, f64>, frame_rate: f64) -> Result<Array1<f64>> {
    let v = differentiate(series, frame_rate)?;
    Ok(v.outer_iter().map(|row| row.dot(&row).sqrt()).collect())
}

/// Speed with per-component smoothing of the velocity, as used for release detection.
pub fn speed_profile(series: ArrayView2<'_, f64>, frame_rate: f64, opts: EventOptions) -> Result<Array1<f64>> {
    let mut v = differentiate(series, frame_rate)?;
    for mut col in v.columns_mut() {
        let smoothed = moving_average(col.view(), opts.smoothing_window);
        col.assign(&smoothed);
    }
    Ok(v.outer_iter().map(|row| row.dot(&row).sqrt()).collect())
}

/// Smoothed upward velocity of a vertical position trace.
pub fn vertical_velocity(height: ArrayView1<'_, f64>, frame_rate: f64, opts: EventOptions) -> Result<Array1<f64>> {
    let as_col = height.to_owned().insert_axis(ndarray::Axis(1));
    let v = differentiate(as_col.view(), frame_rate)?;
    Ok(moving_average(v.column(0), opts.smoothing_window))
}

fn first_argmax(x: ArrayView1<'_, f64>) -> usize {
    let mut best = 0;
    for (i, &v) in x.iter().enumerate() {
        if v > x[best] {
            best = i;
        }
    }
    best
}

/// Onset given an upward-velocity profile and the frame of maximum height.
///
/// The threshold is `ONSET_FRACTION` of the largest upward velocity in
/// `0..=peak`. The scan starts at the first frame attaining that maximum and
/// walks backward; the first frame strictly below the threshold is the onset.
pub fn onset_from_velocity(velocity: ArrayView1<'_, f64>, peak: usize) -> Result<(usize, bool)> {
    if peak >= velocity.len() {
        return Err(Error::EventDetection(format!("height peak {peak} outside the trace")));
    }
    let rising = velocity.slice(ndarray::s![..=peak]);
    let fastest = first_argmax(rising);
    let v_max = rising[fastest];
    if !(v_max > 0.0) {
        return Err(Error::EventDetection("no positive upward velocity before the height peak".into()));
    }
    let threshold = ONSET_FRACTION * v_max;
    match (0..=fastest).rev().find(|&i| rising[i] < threshold) {
        Some(i) => Ok((i, false)),
        None => Ok((0, true)),
    }
}

/// Frame of maximum height and motion onset from the lead knee's vertical trace.
pub fn detect_onset(knee_vertical: ArrayView1<'_, f64>, frame_rate: f64, opts: EventOptions) -> Result<OnsetDetection> {
    let t = knee_vertical.len();
    if t < 3 {
        return Err(Error::InputTooShort { needed: 3, got: t });
    }
    let peak = first_argmax(knee_vertical);
    let velocity = vertical_velocity(knee_vertical, frame_rate, opts)?;
    let (onset, warning) = onset_from_velocity(velocity.view(), peak)?;
    if warning {
        log::warn!("onset threshold never crossed before frame {peak}; using frame 0");
    }
    Ok(OnsetDetection {
        max_knee_height_frame: peak,
        onset_frame: onset,
        warning,
    })
}

/// Release frame: maximum wrist speed over the interior frames (first on ties).
///
/// The first and last frames only have one-sided velocity estimates and are
/// not eligible.
pub fn detect_release(wrist: ArrayView2<'_, f64>, frame_rate: f64, opts: EventOptions) -> Result<usize> {
    let speed = speed_profile(wrist, frame_rate, opts)?;
    if speed.iter().all(|&s| s == 0.0) {
        return Err(Error::EventDetection("wrist never moves".into()));
    }
    let interior = speed.slice(ndarray::s![1..speed.len() - 1]);
    Ok(1 + first_argmax(interior))
}

/// Runs both detectors on one raw trial.
pub fn detect_events(trial: &RawTrial, schema: &JointSchema, opts: EventOptions) -> Result<TrialEvents> {
    let wrap = |e: Error| Error::InvalidTrial {
        trial: trial.trial_id.clone(),
        reason: e.to_string(),
    };
    let knee = schema.columns(&schema.lead_knee)?;
    let wrist = schema.columns(&schema.throwing_wrist)?;
    let height = trial.frames.column(knee.start + schema.vertical_axis);
    let onset = detect_onset(height, trial.frame_rate, opts).map_err(wrap)?;
    let release = detect_release(trial.frames.slice(ndarray::s![.., wrist]), trial.frame_rate, opts).map_err(wrap)?;
    if release <= onset.max_knee_height_frame {
        return Err(wrap(Error::EventDetection(format!(
            "release frame {release} does not follow maximum knee height at {}",
            onset.max_knee_height_frame
        ))));
    }
    Ok(TrialEvents {
        max_knee_height_frame: onset.max_knee_height_frame,
        onset_frame: onset.onset_frame,
        release_frame: release,
        onset_warning: onset.warning,
    })
}
