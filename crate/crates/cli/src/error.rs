use std::path::PathBuf;

use drivecast_core::forecaster::ForecastError;
use drivecast_core::hyperopt::HyperoptError;
use drivecast_core::neural_core::NnError;
use drivecast_core::signal_pipeline::SignalError;
use drivecast_core::synth_world::SynthError;
use drivecast_core::track_geometry::TrackError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("input {} does not exist", .0.display())]
    MissingInput(PathBuf),
    #[error("{} has sha256 {found}, but {} records {expected}", path.display(), manifest.display())]
    DigestMismatch {
        path: PathBuf,
        manifest: PathBuf,
        expected: String,
        found: String,
    },
    #[error("{laps} laps cannot be split into train/validation/test sets ({reason})")]
    InsufficientLaps { laps: usize, reason: String },
    #[error("model expects {expected}, data has {found}")]
    ShapeMismatch { expected: String, found: String },
    #[error("config {}: {message}", path.display())]
    InvalidConfig { path: PathBuf, message: String },
    #[error("{0}")]
    InvalidArgument(String),
    #[error("{0}")]
    Usage(String),
}

/// Variant name of the innermost recognised error in the chain.
pub fn error_kind(err: &anyhow::Error) -> String {
    fn variant(d: &dyn std::fmt::Debug) -> String {
        let s = format!("{d:?}");
        s.chars()
            .take_while(|c| c.is_alphanumeric() || *c == '_')
            .collect()
    }
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<HarnessError>() {
            return variant(e);
        }
        if let Some(e) = cause.downcast_ref::<SynthError>() {
            match e {
                SynthError::Track(t) => return variant(t),
                SynthError::Signal(s) => return variant(s),
                _ => return variant(e),
            }
        }
        if let Some(e) = cause.downcast_ref::<ForecastError>() {
            return variant(e);
        }
        if let Some(e) = cause.downcast_ref::<SignalError>() {
            return variant(e);
        }
        if let Some(e) = cause.downcast_ref::<TrackError>() {
            return variant(e);
        }
        if let Some(e) = cause.downcast_ref::<HyperoptError>() {
            return variant(e);
        }
        if let Some(e) = cause.downcast_ref::<NnError>() {
            return variant(e);
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return "IoFailure".into();
        }
        if cause.downcast_ref::<serde_json::Error>().is_some() {
            return "Format".into();
        }
    }
    "Failure".into()
}

/// The single-line JSON error record printed on stderr.
pub fn error_json(err: &anyhow::Error) -> String {
    let message = err
        .chain()
        .map(|c| c.to_string())
        .collect::<Vec<_>>()
        .join(": ");
    serde_json::json!({ "error": error_kind(err), "message": message }).to_string()
}
