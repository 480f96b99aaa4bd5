//! Dataset preparation: anti-alias filtering and decimation of raw laps,
//! z-score normalization, and unit-stride windowing with road-ahead context.

mod filter;
mod lap;
mod norm;
mod window;

pub use filter::{
    butterworth_lowpass, decimate, power_retention, zero_phase_filter, Biquad, FILTER_ORDER,
    PAD_LEN,
};
pub use lap::{
    channel_names, LapManifest, LapRecording, ManifestEntry, CHANNEL_COUNT, POSE_CHANNEL_NAMES,
};
pub use norm::{denormalize, fit_norm_stats, normalize, NormStats, MIN_STD};
pub use window::{
    make_windows, project_lap, split_laps, Split, WindowOrigin, WindowShape, WindowedDataset,
    DATASET_FORMAT_VERSION,
};

use thiserror::Error;

use crate::track_geometry::TrackError;

pub const VEHICLE_FEATURE_COUNT: usize = 16;
/// Vehicle feature order. Body rates follow the chassis axes: `omega_x`
/// roll, `omega_y` yaw, `omega_z` pitch.
pub const VEHICLE_FEATURE_NAMES: [&str; VEHICLE_FEATURE_COUNT] = [
    "a_x",
    "a_y",
    "a_z",
    "omega_x",
    "omega_y",
    "omega_z",
    "rel_distance",
    "rel_yaw",
    "v_x",
    "v_y",
    "v_z",
    "throttle",
    "brake",
    "steer_angle",
    "steer_rate",
    "gear",
];
/// Forecast targets: longitudinal and lateral acceleration, yaw rate.
pub const PRIMARY_INDICES: [usize; 3] = [0, 1, 4];

pub const RAW_SAMPLE_RATE: f64 = 100.0;
pub const CUTOFF_HZ: f64 = 4.0;
pub const DECIMATION: usize = 10;

#[derive(Debug, Error)]
pub enum SignalError {
    #[error("signal has {len} samples, at least {min} required")]
    SignalTooShort { len: usize, min: usize },
    #[error("cutoff {fc} Hz invalid for sample rate {fs} Hz")]
    InvalidCutoff { fs: f64, fc: f64 },
    #[error("channel {0} is constant over the training laps")]
    ConstantChannel(String),
    #[error("expected {expected} entries, found {found}")]
    StatsMismatch { expected: usize, found: usize },
    #[error("lap {lap_id} has {len} samples, at least {min} required")]
    LapTooShort {
        lap_id: String,
        len: usize,
        min: usize,
    },
    #[error("split {train}-{validation}-{test} does not partition {laps} laps")]
    BadRatios {
        train: usize,
        validation: usize,
        test: usize,
        laps: usize,
    },
    #[error("no laps supplied")]
    NoLaps,
    #[error("channel {channel} has {len} samples, expected {expected}")]
    ChannelLength {
        channel: String,
        len: usize,
        expected: usize,
    },
    #[error("missing channel {0}")]
    MissingChannel(String),
    #[error("channel {0} appears twice")]
    DuplicateChannel(String),
    #[error("unknown channel {0}")]
    UnknownChannel(String),
    #[error("format: {0}")]
    Format(String),
    #[error(transparent)]
    Track(#[from] TrackError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
