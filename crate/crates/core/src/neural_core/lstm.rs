use rand::Rng;
use serde::{Deserialize, Serialize};

use super::params::ParamSet;
use super::tensor::{gemm_nn, gemm_nt, gemm_tn, Tensor2, Tensor3};
use super::{glorot_uniform, sigmoid, NnError};

/// One LSTM direction. Gate blocks are laid out `[input, forget, cell,
/// output]`, each `units` wide; `w` is `input × 4u`, `u` is `u × 4u`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmLayerParams {
    pub input: usize,
    pub units: usize,
    pub w: Vec<f64>,
    pub u: Vec<f64>,
    pub b: Vec<f64>,
}

impl LstmLayerParams {
    pub fn zeros(input: usize, units: usize) -> Self {
        Self {
            input,
            units,
            w: vec![0.0; input * 4 * units],
            u: vec![0.0; units * 4 * units],
            b: vec![0.0; 4 * units],
        }
    }

    /// Glorot-uniform input and recurrent weights, unit forget bias.
    pub fn init<R: Rng + ?Sized>(input: usize, units: usize, rng: &mut R) -> Self {
        let mut p = Self::zeros(input, units);
        glorot_uniform(&mut p.w, input, 4 * units, rng);
        glorot_uniform(&mut p.u, units, 4 * units, rng);
        p.b[units..2 * units].iter_mut().for_each(|v| *v = 1.0);
        p
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.input, self.units)
    }
}

impl ParamSet for LstmLayerParams {
    fn visit(&self, f: &mut dyn FnMut(&[f64])) {
        f(&self.w);
        f(&self.u);
        f(&self.b);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [f64])) {
        f(&mut self.w);
        f(&mut self.u);
        f(&mut self.b);
    }
}

/// Everything one cell step needs for its backward pass.
#[derive(Debug, Clone)]
pub struct CellCache {
    pub x: Tensor2,
    pub h_prev: Tensor2,
    pub c_prev: Tensor2,
    /// Activated gates `[i, f, g, o]`, `batch × 4u`.
    pub gates: Tensor2,
    pub c: Tensor2,
    pub tanh_c: Tensor2,
    pub h: Tensor2,
}

/// Single LSTM step over a batch.
pub fn cell_forward(
    p: &LstmLayerParams,
    x: &Tensor2,
    h_prev: &Tensor2,
    c_prev: &Tensor2,
) -> Result<CellCache, NnError> {
    let u = p.units;
    if x.cols != p.input {
        return Err(NnError::shape("lstm cell input", p.input, x.cols));
    }
    if h_prev.cols != u || c_prev.cols != u || h_prev.rows != x.rows || c_prev.rows != x.rows {
        return Err(NnError::shape("lstm cell state", u, h_prev.cols));
    }
    let batch = x.rows;
    let mut z = Tensor2::zeros(batch, 4 * u);
    for r in 0..batch {
        z.row_mut(r).copy_from_slice(&p.b);
    }
    gemm_nn(&x.data, &p.w, &mut z.data, batch, p.input, 4 * u);
    gemm_nn(&h_prev.data, &p.u, &mut z.data, batch, u, 4 * u);
    let mut c = Tensor2::zeros(batch, u);
    let mut tanh_c = Tensor2::zeros(batch, u);
    let mut h = Tensor2::zeros(batch, u);
    for r in 0..batch {
        let zr = z.row_mut(r);
        for j in 0..u {
            zr[j] = sigmoid(zr[j]);
            zr[u + j] = sigmoid(zr[u + j]);
            zr[2 * u + j] = zr[2 * u + j].tanh();
            zr[3 * u + j] = sigmoid(zr[3 * u + j]);
        }
        let cp = c_prev.row(r);
        let zr = z.row(r);
        for j in 0..u {
            let cv = zr[u + j] * cp[j] + zr[j] * zr[2 * u + j];
            let tc = cv.tanh();
            c.set(r, j, cv);
            tanh_c.set(r, j, tc);
            h.set(r, j, zr[3 * u + j] * tc);
        }
    }
    h.debug_check_finite();
    Ok(CellCache {
        x: x.clone(),
        h_prev: h_prev.clone(),
        c_prev: c_prev.clone(),
        gates: z,
        c,
        tanh_c,
        h,
    })
}

/// Backward of one step given `∂L/∂h_t` and `∂L/∂c_t`. Accumulates into
/// `grads`; returns `(∂L/∂x_t, ∂L/∂h_{t−1}, ∂L/∂c_{t−1})`.
pub fn cell_backward(
    p: &LstmLayerParams,
    grads: &mut LstmLayerParams,
    cache: &CellCache,
    dh: &Tensor2,
    dc: &Tensor2,
) -> (Tensor2, Tensor2, Tensor2) {
    let u = p.units;
    let batch = cache.x.rows;
    let mut dz = Tensor2::zeros(batch, 4 * u);
    let mut dc_prev = Tensor2::zeros(batch, u);
    for r in 0..batch {
        let g = cache.gates.row(r);
        let tc = cache.tanh_c.row(r);
        let cp = cache.c_prev.row(r);
        let dhr = dh.row(r);
        let dcr = dc.row(r);
        let dzr = dz.row_mut(r);
        for j in 0..u {
            let (i, f, gg, o) = (g[j], g[u + j], g[2 * u + j], g[3 * u + j]);
            let d_o = dhr[j] * tc[j];
            let dct = dcr[j] + dhr[j] * o * (1.0 - tc[j] * tc[j]);
            dzr[j] = dct * gg * i * (1.0 - i);
            dzr[u + j] = dct * cp[j] * f * (1.0 - f);
            dzr[2 * u + j] = dct * i * (1.0 - gg * gg);
            dzr[3 * u + j] = d_o * o * (1.0 - o);
            dc_prev.set(r, j, dct * f);
        }
    }
    gemm_tn(&cache.x.data, &dz.data, &mut grads.w, batch, p.input, 4 * u);
    gemm_tn(&cache.h_prev.data, &dz.data, &mut grads.u, batch, u, 4 * u);
    for r in 0..batch {
        for (gb, d) in grads.b.iter_mut().zip(dz.row(r)) {
            *gb += d;
        }
    }
    let mut dx = Tensor2::zeros(batch, p.input);
    gemm_nt(&dz.data, &p.w, &mut dx.data, batch, 4 * u, p.input);
    let mut dh_prev = Tensor2::zeros(batch, u);
    gemm_nt(&dz.data, &p.u, &mut dh_prev.data, batch, 4 * u, u);
    (dx, dh_prev, dc_prev)
}

/// Forward pass through a sequence; `reverse` processes steps from last to
/// first while keeping outputs aligned with input time.
#[derive(Debug, Clone)]
pub struct LstmForward {
    pub outputs: Tensor3,
    pub h_t: Tensor2,
    pub c_t: Tensor2,
    pub caches: Vec<CellCache>,
    pub reverse: bool,
}

pub fn lstm_forward(
    p: &LstmLayerParams,
    seq: &Tensor3,
    h0: Option<&Tensor2>,
    c0: Option<&Tensor2>,
) -> Result<LstmForward, NnError> {
    run_direction(p, seq, h0, c0, false)
}

fn run_direction(
    p: &LstmLayerParams,
    seq: &Tensor3,
    h0: Option<&Tensor2>,
    c0: Option<&Tensor2>,
    reverse: bool,
) -> Result<LstmForward, NnError> {
    if seq.features != p.input {
        return Err(NnError::shape("lstm_forward", p.input, seq.features));
    }
    let batch = seq.batch;
    let mut h = h0
        .cloned()
        .unwrap_or_else(|| Tensor2::zeros(batch, p.units));
    let mut c = c0
        .cloned()
        .unwrap_or_else(|| Tensor2::zeros(batch, p.units));
    let mut outputs = Tensor3::zeros(batch, seq.steps, p.units);
    let mut caches = Vec::with_capacity(seq.steps);
    for k in 0..seq.steps {
        let t = if reverse { seq.steps - 1 - k } else { k };
        let cache = cell_forward(p, &seq.step(t), &h, &c)?;
        outputs.set_step(t, &cache.h);
        h = cache.h.clone();
        c = cache.c.clone();
        caches.push(cache);
    }
    Ok(LstmForward {
        outputs,
        h_t: h,
        c_t: c,
        caches,
        reverse,
    })
}

/// Backpropagation through time. `d_outputs` is the loss gradient w.r.t.
/// the output sequence (if used), `dh_t`/`dc_t` w.r.t. the final state.
/// Returns `(∂L/∂seq, ∂L/∂h0, ∂L/∂c0)`.
pub fn lstm_backward(
    p: &LstmLayerParams,
    grads: &mut LstmLayerParams,
    fwd: &LstmForward,
    d_outputs: Option<&Tensor3>,
    dh_t: Option<&Tensor2>,
    dc_t: Option<&Tensor2>,
) -> Result<(Tensor3, Tensor2, Tensor2), NnError> {
    let steps = fwd.caches.len();
    let batch = fwd.h_t.rows;
    if let Some(d) = d_outputs {
        if d.batch != batch || d.steps != steps || d.features != p.units {
            return Err(NnError::shape("lstm_backward", p.units, d.features));
        }
    }
    let mut dh = dh_t
        .cloned()
        .unwrap_or_else(|| Tensor2::zeros(batch, p.units));
    let mut dc = dc_t
        .cloned()
        .unwrap_or_else(|| Tensor2::zeros(batch, p.units));
    let mut dseq = Tensor3::zeros(batch, steps, p.input);
    for k in (0..steps).rev() {
        let t = if fwd.reverse { steps - 1 - k } else { k };
        if let Some(d) = d_outputs {
            dh.add_assign(&d.step(t));
        }
        let (dx, dh_prev, dc_prev) = cell_backward(p, grads, &fwd.caches[k], &dh, &dc);
        dseq.set_step(t, &dx);
        dh = dh_prev;
        dc = dc_prev;
    }
    Ok((dseq, dh, dc))
}

/// Both directions of a bidirectional layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiLstmParams {
    pub fwd: LstmLayerParams,
    pub bwd: LstmLayerParams,
}

impl BiLstmParams {
    pub fn init<R: Rng + ?Sized>(input: usize, units: usize, rng: &mut R) -> Self {
        Self {
            fwd: LstmLayerParams::init(input, units, rng),
            bwd: LstmLayerParams::init(input, units, rng),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            fwd: self.fwd.zeros_like(),
            bwd: self.bwd.zeros_like(),
        }
    }

    pub fn units(&self) -> usize {
        self.fwd.units
    }
}

impl ParamSet for BiLstmParams {
    fn visit(&self, f: &mut dyn FnMut(&[f64])) {
        self.fwd.visit(f);
        self.bwd.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [f64])) {
        self.fwd.visit_mut(f);
        self.bwd.visit_mut(f);
    }
}

#[derive(Debug, Clone)]
pub struct BiLstmForward {
    /// Per-step `[forward | backward]` hidden states, `2u` features.
    pub outputs: Tensor3,
    pub h_f: Tensor2,
    pub h_b: Tensor2,
    pub c_f: Tensor2,
    pub c_b: Tensor2,
    pub fwd: LstmForward,
    pub bwd: LstmForward,
}

pub fn bilstm_forward(p: &BiLstmParams, seq: &Tensor3) -> Result<BiLstmForward, NnError> {
    bilstm_forward_with_state(p, seq, None)
}

/// Bidirectional pass with optional `(h0, c0)` shared by both directions.
pub fn bilstm_forward_with_state(
    p: &BiLstmParams,
    seq: &Tensor3,
    init: Option<(&Tensor2, &Tensor2)>,
) -> Result<BiLstmForward, NnError> {
    if p.fwd.units != p.bwd.units || p.fwd.input != p.bwd.input {
        return Err(NnError::shape(
            "bilstm directions",
            p.fwd.units,
            p.bwd.units,
        ));
    }
    let (h0, c0) = match init {
        Some((h, c)) => (Some(h), Some(c)),
        None => (None, None),
    };
    let f = run_direction(&p.fwd, seq, h0, c0, false)?;
    let b = run_direction(&p.bwd, seq, h0, c0, true)?;
    let outputs = f.outputs.concat_features(&b.outputs)?;
    Ok(BiLstmForward {
        outputs,
        h_f: f.h_t.clone(),
        h_b: b.h_t.clone(),
        c_f: f.c_t.clone(),
        c_b: b.c_t.clone(),
        fwd: f,
        bwd: b,
    })
}

/// Gradients flowing into a bidirectional layer's results.
#[derive(Debug, Clone, Default)]
pub struct BiLstmGrad<'a> {
    pub outputs: Option<&'a Tensor3>,
    pub h_f: Option<&'a Tensor2>,
    pub h_b: Option<&'a Tensor2>,
    pub c_f: Option<&'a Tensor2>,
    pub c_b: Option<&'a Tensor2>,
}

/// Returns `(∂L/∂seq, ∂L/∂h0, ∂L/∂c0)`, the initial-state gradients
/// summed over both directions.
pub fn bilstm_backward(
    p: &BiLstmParams,
    grads: &mut BiLstmParams,
    fwd: &BiLstmForward,
    d: &BiLstmGrad<'_>,
) -> Result<(Tensor3, Tensor2, Tensor2), NnError> {
    let u = p.units();
    let (df_out, db_out) = match d.outputs {
        Some(o) => (Some(o.feature_slice(0, u)), Some(o.feature_slice(u, u))),
        None => (None, None),
    };
    let (mut dx, mut dh0, mut dc0) = lstm_backward(
        &p.fwd,
        &mut grads.fwd,
        &fwd.fwd,
        df_out.as_ref(),
        d.h_f,
        d.c_f,
    )?;
    let (dxb, dhb, dcb) = lstm_backward(
        &p.bwd,
        &mut grads.bwd,
        &fwd.bwd,
        db_out.as_ref(),
        d.h_b,
        d.c_b,
    )?;
    for (a, b) in dx.data.iter_mut().zip(&dxb.data) {
        *a += b;
    }
    dh0.add_assign(&dhb);
    dc0.add_assign(&dcb);
    Ok((dx, dh0, dc0))
}
