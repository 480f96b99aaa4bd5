//! The two-encoder, two-stage-decoder forecasting network, its weighted
//! loss and primary-feature metric, training and model persistence.

mod io;
mod model;
mod train;

pub use io::{write_predictions_csv, MODEL_FORMAT_VERSION, MODEL_MAGIC};
pub use model::{batch_from_dataset, Batch, ForwardCache, ModelWeights, NetworkParams};
pub use train::{
    constant_hold_metric, evaluate, train, train_with_observer, EpochRecord, EvalSummary,
    Phase1Schedule, Phase2Schedule, TrainHistory, TrainingSchedule,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::neural_core::{NnError, Tensor2};
pub use crate::signal_pipeline::{PRIMARY_INDICES, VEHICLE_FEATURE_COUNT, VEHICLE_FEATURE_NAMES};

/// `(t_P + 1) × n` normalized past samples, last row at time `k`.
pub type PastWindow = Tensor2;
/// `t_F × n` future samples, truth or prediction.
pub type FutureWindow = Tensor2;

#[derive(Debug, Error)]
pub enum ForecastError {
    #[error("invalid hyperparameters: {0}")]
    InvalidHyperparams(String),
    #[error(transparent)]
    ShapeMismatch(#[from] NnError),
    #[error("cannot aggregate an empty set")]
    EmptySet,
    #[error("{0} split is empty")]
    EmptySplit(&'static str),
    #[error("model file version {found}, expected {expected}")]
    FormatVersionMismatch { found: u32, expected: u32 },
    #[error("model file: {0}")]
    Format(String),
    #[error(transparent)]
    IoFailure(#[from] std::io::Error),
}

/// The five tuned scalars.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    /// Dropout rate between the merge dense layers.
    pub r: f64,
    /// Loss weight of the secondary features.
    pub w: f64,
    /// Past steps `t_P`; the past window holds `t_P + 1` rows.
    pub t_p: usize,
    /// Total units `u_{e,d}`.
    pub u_ed: usize,
    /// Encoder share `ξ`.
    pub xi: f64,
}

impl Hyperparams {
    pub fn u_e(&self) -> usize {
        (self.xi * self.u_ed as f64).round() as usize
    }

    pub fn u_d(&self) -> usize {
        self.u_ed.saturating_sub(self.u_e())
    }

    pub fn validate(&self) -> Result<(), ForecastError> {
        let bad = |m: String| Err(ForecastError::InvalidHyperparams(m));
        if !(0.0..1.0).contains(&self.r) {
            return bad(format!("dropout rate {} outside [0, 1)", self.r));
        }
        if !(0.0..=1.0).contains(&self.w) {
            return bad(format!("weight {} outside [0, 1]", self.w));
        }
        if self.t_p < 1 {
            return bad("t_P must be at least 1".into());
        }
        if !self.xi.is_finite() || self.u_e() < 1 || self.u_d() < 1 {
            return bad(format!(
                "u_e = {}, u_d = {} from u_ed = {}, xi = {}",
                self.u_e(),
                self.u_d(),
                self.u_ed,
                self.xi
            ));
        }
        Ok(())
    }
}

/// Per-feature loss weight: 1 on primary features, `w` elsewhere.
pub fn feature_weights(n: usize, w: f64) -> Vec<f64> {
    let mut out = vec![w; n];
    for &j in PRIMARY_INDICES.iter().filter(|&&j| j < n) {
        out[j] = 1.0;
    }
    out
}

fn check_pair(pred: &FutureWindow, truth: &FutureWindow) -> Result<(), ForecastError> {
    if pred.rows != truth.rows || pred.cols != truth.cols {
        return Err(NnError::ShapeMismatch {
            op: "loss",
            expected: truth.rows * truth.cols,
            found: pred.rows * pred.cols,
        }
        .into());
    }
    Ok(())
}

/// `Σ_i Σ_j w^j (x̂ − x)² / n`, summed (not averaged) over future steps.
pub fn wmse_loss(pred: &FutureWindow, truth: &FutureWindow, w: f64) -> Result<f64, ForecastError> {
    check_pair(pred, truth)?;
    Ok(wmse_slice(
        &pred.data,
        &truth.data,
        &feature_weights(pred.cols, w),
    ))
}

/// Gradient of [`wmse_loss`] with respect to `pred`.
pub fn wmse_grad(
    pred: &FutureWindow,
    truth: &FutureWindow,
    w: f64,
) -> Result<FutureWindow, ForecastError> {
    check_pair(pred, truth)?;
    let weights = feature_weights(pred.cols, w);
    let mut g = Tensor2::zeros(pred.rows, pred.cols);
    let scale = 2.0 / pred.cols as f64;
    for (k, gv) in g.data.iter_mut().enumerate() {
        *gv = scale * weights[k % pred.cols] * (pred.data[k] - truth.data[k]);
    }
    Ok(g)
}

pub(crate) fn wmse_slice(pred: &[f64], truth: &[f64], weights: &[f64]) -> f64 {
    let n = weights.len();
    let mut acc = 0.0;
    for (k, (p, t)) in pred.iter().zip(truth).enumerate() {
        let e = p - t;
        acc += weights[k % n] * e * e;
    }
    acc / n as f64
}

/// `Σ_i Σ_{j primary} |x̂ − x| / q`, summed over future steps.
pub fn mae_metric(pred: &FutureWindow, truth: &FutureWindow) -> Result<f64, ForecastError> {
    check_pair(pred, truth)?;
    Ok(mae_slice(&pred.data, &truth.data, pred.cols))
}

pub(crate) fn mae_slice(pred: &[f64], truth: &[f64], n: usize) -> f64 {
    let mut acc = 0.0;
    for i in 0..pred.len() / n {
        for &j in &PRIMARY_INDICES {
            acc += (pred[i * n + j] - truth[i * n + j]).abs();
        }
    }
    acc / PRIMARY_INDICES.len() as f64
}

/// Arithmetic mean of per-window values.
pub fn aggregate(values: &[f64]) -> Result<f64, ForecastError> {
    if values.is_empty() {
        return Err(ForecastError::EmptySet);
    }
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derived_units_round() {
        let hp = |u_ed, xi| Hyperparams {
            r: 0.3,
            w: 0.5,
            t_p: 20,
            u_ed,
            xi,
        };
        assert_eq!((hp(80, 0.4).u_e(), hp(80, 0.4).u_d()), (32, 48));
        assert_eq!((hp(94, 0.3404).u_e(), hp(94, 0.3404).u_d()), (32, 62));
        assert!(hp(2, 0.1).validate().is_err());
        let mut bad = hp(80, 0.4);
        bad.r = 1.0;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn aggregate_cases() {
        assert_eq!(aggregate(&[2.0, 4.0]).unwrap(), 3.0);
        assert_eq!(aggregate(&[5.5]).unwrap(), 5.5);
        assert!(matches!(aggregate(&[]), Err(ForecastError::EmptySet)));
    }

    #[test]
    fn weights_mark_primaries() {
        let w = feature_weights(16, 0.25);
        for (j, v) in w.iter().enumerate() {
            let want = if PRIMARY_INDICES.contains(&j) {
                1.0
            } else {
                0.25
            };
            assert_eq!(*v, want);
        }
    }
}
