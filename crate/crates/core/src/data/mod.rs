//! Motion-capture ingestion, event detection, windowing, standardization,
//! cross-validation folds and synthetic datasets with known latent dynamics.

mod events;
mod folds;
pub mod io;
mod schema;
mod standardize;
mod synth;
mod window;

pub use events::{
    compute_speed, detect_events, detect_onset, detect_release, moving_average, onset_from_velocity, speed_profile,
    vertical_velocity, EventOptions, OnsetDetection, TrialEvents,
};
pub use folds::{make_folds, FoldAssignment};
pub use schema::{JointSchema, FEATURE_DIM, N_JOINTS};
pub use standardize::{fit_stats, standardize, standardize_trial, unstandardize, unstandardize_trial, StandardizationStats};
pub use synth::{synth_generate, GroundTruth, ObservationMap, SynthConfig, SynthDynamics};
pub use window::{align_and_window, MotionDataset, RawTrial};
