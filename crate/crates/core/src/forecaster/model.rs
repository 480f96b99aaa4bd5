use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ForecastError, FutureWindow, Hyperparams, PastWindow};
use crate::neural_core::{
    bilstm_backward, bilstm_forward, cell_backward, cell_forward, dense_backward, dense_forward,
    dropout, BiLstmForward, BiLstmGrad, BiLstmParams, CellCache, DenseParams, LstmLayerParams,
    NnError, ParamSet, Tensor2, Tensor3,
};
use crate::signal_pipeline::{NormStats, WindowedDataset};

/// Every learnable block, in declaration (and serialization) order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkParams {
    pub enc_past: BiLstmParams,
    pub enc_road: BiLstmParams,
    pub dense_h1: DenseParams,
    pub dense_h2: DenseParams,
    pub dense_c1: DenseParams,
    pub dense_c2: DenseParams,
    pub dec1: LstmLayerParams,
    pub dec2: BiLstmParams,
    pub out: DenseParams,
}

impl NetworkParams {
    pub fn init<R: Rng + ?Sized>(hp: &Hyperparams, n: usize, m: usize, rng: &mut R) -> Self {
        let (ue, ud) = (hp.u_e(), hp.u_d());
        Self {
            enc_past: BiLstmParams::init(n, ue, rng),
            enc_road: BiLstmParams::init(m, ue, rng),
            dense_h1: DenseParams::glorot(4 * ue, 2 * ue, rng),
            dense_h2: DenseParams::glorot(2 * ue, ud, rng),
            dense_c1: DenseParams::glorot(4 * ue, 2 * ue, rng),
            dense_c2: DenseParams::glorot(2 * ue, ud, rng),
            dec1: LstmLayerParams::init(ud, ud, rng),
            dec2: BiLstmParams::init(ud, ud, rng),
            out: DenseParams::glorot(2 * ud, n, rng),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            enc_past: self.enc_past.zeros_like(),
            enc_road: self.enc_road.zeros_like(),
            dense_h1: self.dense_h1.zeros_like(),
            dense_h2: self.dense_h2.zeros_like(),
            dense_c1: self.dense_c1.zeros_like(),
            dense_c2: self.dense_c2.zeros_like(),
            dec1: self.dec1.zeros_like(),
            dec2: self.dec2.zeros_like(),
            out: self.out.zeros_like(),
        }
    }
}

impl ParamSet for NetworkParams {
    fn visit(&self, f: &mut dyn FnMut(&[f64])) {
        self.enc_past.visit(f);
        self.enc_road.visit(f);
        self.dense_h1.visit(f);
        self.dense_h2.visit(f);
        self.dense_c1.visit(f);
        self.dense_c2.visit(f);
        self.dec1.visit(f);
        self.dec2.visit(f);
        self.out.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [f64])) {
        self.enc_past.visit_mut(f);
        self.enc_road.visit_mut(f);
        self.dense_h1.visit_mut(f);
        self.dense_h2.visit_mut(f);
        self.dense_c1.visit_mut(f);
        self.dense_c2.visit_mut(f);
        self.dec1.visit_mut(f);
        self.dec2.visit_mut(f);
        self.out.visit_mut(f);
    }
}

/// A trained or freshly initialized forecaster with everything needed to
/// interpret its inputs and outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelWeights {
    pub hp: Hyperparams,
    pub t_f: usize,
    pub p_r: usize,
    /// Road look-ahead distance the model was trained with (m).
    pub d_r: f64,
    pub n: usize,
    pub m: usize,
    pub stats: NormStats,
    pub params: NetworkParams,
}

/// Inputs (and optionally targets) of a batch of windows.
#[derive(Debug, Clone)]
pub struct Batch {
    pub past: Tensor3,
    pub road: Tensor3,
    pub future: Option<Tensor3>,
}

/// Widens the selected windows of `ds` into `f64` batch tensors.
pub fn batch_from_dataset(ds: &WindowedDataset, indices: &[usize]) -> Batch {
    let s = ds.shape;
    let b = indices.len();
    let widen = |parts: &mut dyn Iterator<Item = &[f32]>, len: usize| {
        let mut v = Vec::with_capacity(b * len);
        for p in parts {
            v.extend(p.iter().map(|&x| f64::from(x)));
        }
        v
    };
    let past = widen(&mut indices.iter().map(|&i| ds.past(i)), s.past_len());
    let road = widen(&mut indices.iter().map(|&i| ds.road(i)), s.road_len());
    let future = widen(&mut indices.iter().map(|&i| ds.future(i)), s.future_len());
    Batch {
        past: Tensor3::from_vec(b, s.t_p + 1, s.n, past).expect("past shape"),
        road: Tensor3::from_vec(b, s.p_r, s.m, road).expect("road shape"),
        future: Some(Tensor3::from_vec(b, s.t_f, s.n, future).expect("future shape")),
    }
}

/// Intermediate values of one forward pass, consumed by `backward`.
pub struct ForwardCache {
    enc_past: BiLstmForward,
    enc_road: BiLstmForward,
    h_cat: Tensor2,
    c_cat: Tensor2,
    h1: Tensor2,
    c1: Tensor2,
    mask_h: Option<Vec<f64>>,
    mask_c: Option<Vec<f64>>,
    dec1: Vec<CellCache>,
    dec2: BiLstmForward,
    dec2_flat: Tensor2,
    /// Prediction, `batch × t_F × n`.
    pub output: Tensor3,
}

fn hconcat4(a: &Tensor2, b: &Tensor2, c: &Tensor2, d: &Tensor2) -> Result<Tensor2, NnError> {
    a.hconcat(b)?.hconcat(c)?.hconcat(d)
}

impl ModelWeights {
    /// Builds and initializes every layer from `seed`.
    pub fn build(
        hp: Hyperparams,
        t_f: usize,
        p_r: usize,
        d_r: f64,
        stats: NormStats,
        seed: u64,
    ) -> Result<Self, ForecastError> {
        hp.validate()?;
        if t_f < 1 || p_r < 1 {
            return Err(ForecastError::InvalidHyperparams(format!(
                "t_F = {t_f} and p_R = {p_r} must be positive"
            )));
        }
        let n = stats.vehicle_mean.len();
        let m = stats.road_mean.len();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(Self {
            params: NetworkParams::init(&hp, n, m, &mut rng),
            hp,
            t_f,
            p_r,
            d_r,
            n,
            m,
            stats,
        })
    }

    pub fn param_count(&self) -> usize {
        self.params.param_count()
    }

    fn check_inputs(&self, past: &Tensor3, road: &Tensor3) -> Result<(), NnError> {
        if past.steps != self.hp.t_p + 1 || past.features != self.n {
            return Err(NnError::ShapeMismatch {
                op: "forecaster past window",
                expected: (self.hp.t_p + 1) * self.n,
                found: past.steps * past.features,
            });
        }
        if road.steps != self.p_r || road.features != self.m || road.batch != past.batch {
            return Err(NnError::ShapeMismatch {
                op: "forecaster road window",
                expected: self.p_r * self.m,
                found: road.steps * road.features,
            });
        }
        Ok(())
    }

    /// Full forward pass. Dropout is sampled from `rng` when `training`.
    pub fn forward<R: Rng + ?Sized>(
        &self,
        past: &Tensor3,
        road: &Tensor3,
        training: bool,
        rng: &mut R,
    ) -> Result<ForwardCache, ForecastError> {
        self.check_inputs(past, road)?;
        let p = &self.params;
        let r = self.hp.r;
        let batch = past.batch;

        let enc_past = bilstm_forward(&p.enc_past, past)?;
        let enc_road = bilstm_forward(&p.enc_road, road)?;
        let h_cat = hconcat4(&enc_past.h_f, &enc_past.h_b, &enc_road.h_f, &enc_road.h_b)?;
        let c_cat = hconcat4(&enc_past.c_f, &enc_past.c_b, &enc_road.c_f, &enc_road.c_b)?;

        let mut h1 = dense_forward(&p.dense_h1, &h_cat)?;
        let mask_h = dropout(&mut h1.data, r, training, rng);
        let h_d = dense_forward(&p.dense_h2, &h1)?;
        let mut c1 = dense_forward(&p.dense_c1, &c_cat)?;
        let mask_c = dropout(&mut c1.data, r, training, rng);
        let c_d = dense_forward(&p.dense_c2, &c1)?;

        let ud = self.hp.u_d();
        let mut dec1 = Vec::with_capacity(self.t_f);
        let mut seq1 = Tensor3::zeros(batch, self.t_f, ud);
        let (mut x, mut h, mut c) = (h_d.clone(), h_d.clone(), c_d);
        for t in 0..self.t_f {
            let cache = cell_forward(&p.dec1, &x, &h, &c)?;
            seq1.set_step(t, &cache.h);
            h = cache.h.clone();
            c = cache.c.clone();
            x = cache.h.clone();
            dec1.push(cache);
        }

        let dec2 = bilstm_forward(&p.dec2, &seq1)?;
        let dec2_flat = dec2.outputs.clone().into_flat();
        let out = dense_forward(&p.out, &dec2_flat)?;
        let output = Tensor3::from_flat(out, batch, self.t_f)?;
        Ok(ForwardCache {
            enc_past,
            enc_road,
            h_cat,
            c_cat,
            h1,
            c1,
            mask_h,
            mask_c,
            dec1,
            dec2,
            dec2_flat,
            output,
        })
    }

    /// Backpropagates `d_output` (∂L/∂prediction) and returns the
    /// parameter gradient.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        d_output: &Tensor3,
    ) -> Result<NetworkParams, ForecastError> {
        let p = &self.params;
        let mut g = p.zeros_like();
        let batch = d_output.batch;
        let (ue, ud) = (self.hp.u_e(), self.hp.u_d());

        let d_flat = Tensor2::from_vec(batch * self.t_f, self.n, d_output.data.clone())?;
        let d_dec2 = dense_backward(&p.out, &mut g.out, &cache.dec2_flat, &d_flat)?;
        let d_dec2 = Tensor3::from_flat(d_dec2, batch, self.t_f)?;
        let (d_seq1, _, _) = bilstm_backward(
            &p.dec2,
            &mut g.dec2,
            &cache.dec2,
            &BiLstmGrad {
                outputs: Some(&d_dec2),
                ..Default::default()
            },
        )?;

        // feedback decoder: h_t feeds both the next state and the next input
        let mut carry = Tensor2::zeros(batch, ud);
        let mut dc = Tensor2::zeros(batch, ud);
        let mut d_hd = Tensor2::zeros(batch, ud);
        for t in (0..self.t_f).rev() {
            let mut dh = d_seq1.step(t);
            dh.add_assign(&carry);
            let (dx, dh_prev, dc_prev) =
                cell_backward(&p.dec1, &mut g.dec1, &cache.dec1[t], &dh, &dc);
            dc = dc_prev;
            if t == 0 {
                d_hd = dx;
                d_hd.add_assign(&dh_prev);
            } else {
                carry = dx;
                carry.add_assign(&dh_prev);
            }
        }
        let d_cd = dc;

        let mut d_h1 = dense_backward(&p.dense_h2, &mut g.dense_h2, &cache.h1, &d_hd)?;
        if let Some(mask) = &cache.mask_h {
            d_h1.data.iter_mut().zip(mask).for_each(|(d, m)| *d *= m);
        }
        let d_h = dense_backward(&p.dense_h1, &mut g.dense_h1, &cache.h_cat, &d_h1)?;
        let mut d_c1 = dense_backward(&p.dense_c2, &mut g.dense_c2, &cache.c1, &d_cd)?;
        if let Some(mask) = &cache.mask_c {
            d_c1.data.iter_mut().zip(mask).for_each(|(d, m)| *d *= m);
        }
        let d_c = dense_backward(&p.dense_c1, &mut g.dense_c1, &cache.c_cat, &d_c1)?;

        let part = |t: &Tensor2, k: usize| t.columns(k * ue, ue);
        let (hpf, hpb, hrf, hrb) = (part(&d_h, 0), part(&d_h, 1), part(&d_h, 2), part(&d_h, 3));
        let (cpf, cpb, crf, crb) = (part(&d_c, 0), part(&d_c, 1), part(&d_c, 2), part(&d_c, 3));
        bilstm_backward(
            &p.enc_past,
            &mut g.enc_past,
            &cache.enc_past,
            &BiLstmGrad {
                outputs: None,
                h_f: Some(&hpf),
                h_b: Some(&hpb),
                c_f: Some(&cpf),
                c_b: Some(&cpb),
            },
        )?;
        bilstm_backward(
            &p.enc_road,
            &mut g.enc_road,
            &cache.enc_road,
            &BiLstmGrad {
                outputs: None,
                h_f: Some(&hrf),
                h_b: Some(&hrb),
                c_f: Some(&crf),
                c_b: Some(&crb),
            },
        )?;
        Ok(g)
    }

    /// Inference on a batch: no dropout, deterministic.
    pub fn predict_batch(&self, past: &Tensor3, road: &Tensor3) -> Result<Tensor3, ForecastError> {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        Ok(self.forward(past, road, false, &mut rng)?.output)
    }

    /// Forecast of one window; `past` is `(t_P + 1) × n`, `road` is `p_R × m`,
    /// both normalized with [`ModelWeights::stats`].
    pub fn predict(
        &self,
        past: &PastWindow,
        road: &Tensor2,
    ) -> Result<FutureWindow, ForecastError> {
        let past3 = Tensor3::from_vec(1, past.rows, past.cols, past.data.clone())?;
        let road3 = Tensor3::from_vec(1, road.rows, road.cols, road.data.clone())?;
        let out = self.predict_batch(&past3, &road3)?;
        Ok(Tensor2::from_vec(self.t_f, self.n, out.data)?)
    }
}
