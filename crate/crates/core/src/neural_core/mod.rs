//! Dense and LSTM layers with hand-derived backward passes, inverted
//! dropout and the Adam optimizer. All arithmetic is `f64`.

mod dense;
mod lstm;
mod optim;
mod params;
mod tensor;

pub use dense::{dense_backward, dense_forward, DenseParams};
pub use lstm::{
    bilstm_backward, bilstm_forward, bilstm_forward_with_state, cell_backward, cell_forward,
    lstm_backward, lstm_forward, BiLstmForward, BiLstmGrad, BiLstmParams, CellCache, LstmForward,
    LstmLayerParams,
};
pub use optim::{adam_step, dropout, dropout_mask, AdamState};
pub use params::{gradient_check, ParamSet};
pub use tensor::{gemm_nn, gemm_nt, gemm_tn, Tensor2, Tensor3};

use rand::Rng;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum NnError {
    #[error("{op}: expected size {expected}, found {found}")]
    ShapeMismatch {
        op: &'static str,
        expected: usize,
        found: usize,
    },
}

impl NnError {
    pub(crate) fn shape(op: &'static str, expected: usize, found: usize) -> Self {
        NnError::ShapeMismatch {
            op,
            expected,
            found,
        }
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Fills `w` from `U(−a, a)` with `a = √(6 / (fan_in + fan_out))`.
pub fn glorot_uniform<R: Rng + ?Sized>(w: &mut [f64], fan_in: usize, fan_out: usize, rng: &mut R) {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    for v in w.iter_mut() {
        *v = rng.random_range(-a..a);
    }
}
