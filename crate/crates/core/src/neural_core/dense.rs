use rand::Rng;
use serde::{Deserialize, Serialize};

use super::params::ParamSet;
use super::tensor::{gemm_nn, gemm_nt, gemm_tn, Tensor2};
use super::{glorot_uniform, NnError};

/// Affine layer `y = x·W + b` with `W` stored `inputs × outputs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseParams {
    pub inputs: usize,
    pub outputs: usize,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl DenseParams {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            w: vec![0.0; inputs * outputs],
            b: vec![0.0; outputs],
        }
    }

    pub fn glorot<R: Rng + ?Sized>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        let mut p = Self::zeros(inputs, outputs);
        glorot_uniform(&mut p.w, inputs, outputs, rng);
        p
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.inputs, self.outputs)
    }
}

impl ParamSet for DenseParams {
    fn visit(&self, f: &mut dyn FnMut(&[f64])) {
        f(&self.w);
        f(&self.b);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [f64])) {
        f(&mut self.w);
        f(&mut self.b);
    }
}

/// Linear-activation forward pass over every row of `x`.
pub fn dense_forward(p: &DenseParams, x: &Tensor2) -> Result<Tensor2, NnError> {
    if x.cols != p.inputs {
        return Err(NnError::shape("dense_forward", p.inputs, x.cols));
    }
    let mut y = Tensor2::zeros(x.rows, p.outputs);
    for r in 0..x.rows {
        y.row_mut(r).copy_from_slice(&p.b);
    }
    gemm_nn(&x.data, &p.w, &mut y.data, x.rows, p.inputs, p.outputs);
    y.debug_check_finite();
    Ok(y)
}

/// Accumulates parameter gradients into `grads` and returns `∂L/∂x`.
pub fn dense_backward(
    p: &DenseParams,
    grads: &mut DenseParams,
    x: &Tensor2,
    dy: &Tensor2,
) -> Result<Tensor2, NnError> {
    if x.cols != p.inputs || dy.cols != p.outputs || x.rows != dy.rows {
        return Err(NnError::shape("dense_backward", p.outputs, dy.cols));
    }
    gemm_tn(&x.data, &dy.data, &mut grads.w, x.rows, p.inputs, p.outputs);
    for r in 0..dy.rows {
        for (g, d) in grads.b.iter_mut().zip(dy.row(r)) {
            *g += d;
        }
    }
    let mut dx = Tensor2::zeros(x.rows, p.inputs);
    gemm_nt(&dy.data, &p.w, &mut dx.data, x.rows, p.outputs, p.inputs);
    Ok(dx)
}
