use rand::Rng;
use serde::{Deserialize, Serialize};

use super::params::ParamSet;
use super::NnError;

/// Inverted-dropout mask: each entry is 0 with probability `rate`,
/// otherwise `1/(1 − rate)`.
pub fn dropout_mask<R: Rng + ?Sized>(len: usize, rate: f64, rng: &mut R) -> Vec<f64> {
    if rate <= 0.0 {
        return vec![1.0; len];
    }
    let keep = 1.0 / (1.0 - rate);
    (0..len)
        .map(|_| {
            if rng.random::<f64>() < rate {
                0.0
            } else {
                keep
            }
        })
        .collect()
}

/// Applies dropout in place and returns the mask used (`None` when the
/// layer is the identity: inference mode or `rate = 0`).
pub fn dropout<R: Rng + ?Sized>(
    x: &mut [f64],
    rate: f64,
    training: bool,
    rng: &mut R,
) -> Option<Vec<f64>> {
    if !training || rate <= 0.0 {
        return None;
    }
    let mask = dropout_mask(x.len(), rate, rng);
    for (v, m) in x.iter_mut().zip(&mask) {
        *v *= m;
    }
    Some(mask)
}

/// Moment estimates of the Adam optimizer over a flattened parameter set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(param_count: usize) -> Self {
        Self {
            m: vec![0.0; param_count],
            v: vec![0.0; param_count],
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-7,
        }
    }
}

/// One bias-corrected Adam update:
/// `θ ← θ − lr · m̂ / (√v̂ + ε)`.
pub fn adam_step<P: ParamSet + ?Sized>(
    params: &mut P,
    grads: &P,
    state: &mut AdamState,
    lr: f64,
) -> Result<(), NnError> {
    let g = grads.flatten();
    if g.len() != state.m.len() || params.param_count() != g.len() {
        return Err(NnError::shape("adam_step", state.m.len(), g.len()));
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2, eps) = (state.beta1, state.beta2, state.eps);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    for ((m, v), gi) in state.m.iter_mut().zip(state.v.iter_mut()).zip(&g) {
        *m = b1 * *m + (1.0 - b1) * gi;
        *v = b2 * *v + (1.0 - b2) * gi * gi;
    }
    let (m, v) = (&state.m, &state.v);
    let mut off = 0;
    params.visit_mut(&mut |block| {
        for (k, p) in block.iter_mut().enumerate() {
            let mh = m[off + k] / c1;
            let vh = v[off + k] / c2;
            *p -= lr * mh / (vh.sqrt() + eps);
        }
        off += block.len();
    });
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_gradient_keeps_params() {
        let mut p = vec![0.3, -0.7];
        let mut s = AdamState::new(2);
        adam_step(&mut p, &vec![0.0, 0.0], &mut s, 0.01).unwrap();
        assert_eq!(p, vec![0.3, -0.7]);
        assert_eq!(s.step, 1);
    }

    #[test]
    fn first_step_hand_evaluation() {
        // m = 0.1, v = 0.001, m̂ = 1, v̂ = 1: Δ = lr / (1 + ε)
        let mut p = vec![0.0];
        let mut s = AdamState::new(1);
        adam_step(&mut p, &vec![1.0], &mut s, 0.001).unwrap();
        assert!((p[0] + 0.001 / (1.0 + 1e-7)).abs() < 1e-15);
    }

    #[test]
    fn minimizes_parabola() {
        // scalar simulation of the same recurrence as the oracle
        let mut p = vec![1.0];
        let mut s = AdamState::new(1);
        let (mut q, mut m, mut v) = (1.0f64, 0.0f64, 0.0f64);
        for t in 1..=100 {
            let g = 2.0 * p[0];
            adam_step(&mut p, &vec![g], &mut s, 0.1).unwrap();
            let gq = 2.0 * q;
            m = 0.9 * m + 0.1 * gq;
            v = 0.999 * v + 0.001 * gq * gq;
            let mh = m / (1.0 - 0.9f64.powi(t));
            let vh = v / (1.0 - 0.999f64.powi(t));
            q -= 0.1 * mh / (vh.sqrt() + 1e-7);
        }
        assert!(p[0].abs() < 0.1, "{}", p[0]);
        assert!((p[0] - q).abs() < 1e-12);
    }

    #[test]
    fn dropout_identity_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut x = vec![1.0, 2.0, 3.0];
        assert!(dropout(&mut x, 0.0, true, &mut rng).is_none());
        assert!(dropout(&mut x, 0.7, false, &mut rng).is_none());
        assert_eq!(x, vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn dropout_statistics() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut x = vec![1.0; 1_000_000];
        dropout(&mut x, 0.5, true, &mut rng).unwrap();
        let survivors = x.iter().filter(|v| **v != 0.0).count() as f64 / 1e6;
        let mean = x.iter().sum::<f64>() / 1e6;
        assert!((survivors - 0.5).abs() < 0.01);
        assert!((mean - 1.0).abs() < 0.01);
    }
}
