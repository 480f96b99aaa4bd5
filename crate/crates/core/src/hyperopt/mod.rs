//! Gaussian-process Bayesian optimization over a box of scalar
//! hyperparameters: a few random trials, then expected-improvement steps.

mod gp;

pub use gp::{
    expected_improvement, lengthscale_grid, matern52, GaussianProcess, Posterior, BASE_JITTER,
};

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::forecaster::Hyperparams;

#[derive(Debug, Error)]
pub enum HyperoptError {
    #[error("objective failed: {0}")]
    ObjectiveFailure(String),
    #[error("kernel matrix is singular even with maximal jitter")]
    SingularKernel,
    #[error("surrogate needs at least 2 completed trials, got {0}")]
    TooFewTrials(usize),
    #[error("invalid search space: {0}")]
    InvalidSpace(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dimension {
    pub name: String,
    pub lo: f64,
    pub hi: f64,
    pub integer: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub dims: Vec<Dimension>,
}

const HP_NAMES: [&str; 5] = ["r", "w", "t_p", "u_ed", "xi"];

impl SearchSpace {
    /// Dropout, secondary weight, past steps, total units, encoder share.
    pub fn forecaster_default() -> Self {
        let d = |name: &str, lo, hi, integer| Dimension {
            name: name.to_string(),
            lo,
            hi,
            integer,
        };
        Self {
            dims: vec![
                d("r", 0.25, 0.5, false),
                d("w", 0.0, 1.0, false),
                d("t_p", 15.0, 40.0, true),
                d("u_ed", 70.0, 110.0, true),
                d("xi", 0.3, 0.5, false),
            ],
        }
    }

    pub fn validate(&self) -> Result<(), HyperoptError> {
        if self.dims.is_empty() {
            return Err(HyperoptError::InvalidSpace("no dimensions".into()));
        }
        for d in &self.dims {
            let ok = d.lo.is_finite()
                && d.hi.is_finite()
                && d.lo <= d.hi
                && (!d.integer || d.lo.ceil() <= d.hi.floor());
            if !ok {
                return Err(HyperoptError::InvalidSpace(format!(
                    "{} bounds [{}, {}]",
                    d.name, d.lo, d.hi
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.dims.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dims.is_empty()
    }

    /// Maps a unit-cube point to bounds, rounding and clamping integer
    /// dimensions.
    pub fn from_unit(&self, u: &[f64]) -> Vec<f64> {
        self.dims
            .iter()
            .zip(u)
            .map(|(d, &t)| {
                let v = d.lo + t.clamp(0.0, 1.0) * (d.hi - d.lo);
                if d.integer {
                    v.round().clamp(d.lo.ceil(), d.hi.floor())
                } else {
                    v.clamp(d.lo, d.hi)
                }
            })
            .collect()
    }

    pub fn to_unit(&self, x: &[f64]) -> Vec<f64> {
        self.dims
            .iter()
            .zip(x)
            .map(|(d, &v)| {
                if d.hi > d.lo {
                    (v - d.lo) / (d.hi - d.lo)
                } else {
                    0.5
                }
            })
            .collect()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dims.len()
            && self
                .dims
                .iter()
                .zip(x)
                .all(|(d, &v)| v >= d.lo && v <= d.hi && (!d.integer || v.fract() == 0.0))
    }

    /// Reads a point of a space whose dimensions are named
    /// `r, w, t_p, u_ed, xi` in that order.
    pub fn to_hyperparams(&self, x: &[f64]) -> Result<Hyperparams, HyperoptError> {
        let names: Vec<&str> = self.dims.iter().map(|d| d.name.as_str()).collect();
        if names != HP_NAMES || x.len() != 5 {
            return Err(HyperoptError::InvalidSpace(format!(
                "expected dimensions {HP_NAMES:?}, found {names:?}"
            )));
        }
        Ok(Hyperparams {
            r: x[0],
            w: x[1],
            t_p: x[2] as usize,
            u_ed: x[3] as usize,
            xi: x[4],
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TunerConfig {
    pub n_random: usize,
    pub n_bayes: usize,
    /// Random starts of the acquisition search.
    pub starts: usize,
    pub seed: u64,
}

impl Default for TunerConfig {
    fn default() -> Self {
        Self {
            n_random: 2,
            n_bayes: 10,
            starts: 64,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrialKind {
    Random,
    Bayes,
}

/// One evaluated point of [`minimize`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub kind: TrialKind,
    pub point: Vec<f64>,
    /// `None` for failed trials.
    pub metric: Option<f64>,
    pub error: Option<String>,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneOutcome {
    pub trials: Vec<Trial>,
    /// Index of the completed trial with the smallest metric, if any.
    pub best: Option<usize>,
}

impl TuneOutcome {
    pub fn best_trial(&self) -> Option<&Trial> {
        self.best.map(|i| &self.trials[i])
    }

    /// Best completed metric after each trial.
    pub fn incumbent_trace(&self) -> Vec<f64> {
        let mut best = f64::INFINITY;
        self.trials
            .iter()
            .map(|t| {
                if let Some(m) = t.metric {
                    best = best.min(m);
                }
                best
            })
            .collect()
    }
}

const REFINE_START_STEP: f64 = 0.1;
const REFINE_MIN_STEP: f64 = 1e-3;

/// Maximizes EI over the unit cube: random starts, each polished by a
/// shrinking-step coordinate search.
fn maximize_ei(gp: &GaussianProcess, dim: usize, starts: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let best = gp.incumbent();
    let ei = |u: &[f64]| expected_improvement(gp.posterior(u), best);
    let mut arg: Vec<f64> = (0..dim).map(|_| rng.random::<f64>()).collect();
    let mut top = ei(&arg);
    for s in 0..starts.max(1) {
        let mut u: Vec<f64> = if s == 0 {
            arg.clone()
        } else {
            (0..dim).map(|_| rng.random::<f64>()).collect()
        };
        let mut val = ei(&u);
        let mut step = REFINE_START_STEP;
        while step >= REFINE_MIN_STEP {
            let mut improved = false;
            for j in 0..dim {
                for dir in [1.0, -1.0] {
                    let mut c = u.clone();
                    c[j] = (c[j] + dir * step).clamp(0.0, 1.0);
                    let v = ei(&c);
                    if v > val {
                        val = v;
                        u = c;
                        improved = true;
                    }
                }
            }
            if !improved {
                step *= 0.5;
            }
        }
        if val > top {
            top = val;
            arg = u;
        }
    }
    arg
}

/// Minimizes `objective` over `space`. Failed trials are recorded and left
/// out of the surrogate; surrogate steps fall back to random points while
/// fewer than two trials have completed.
pub fn minimize(
    space: &SearchSpace,
    cfg: &TunerConfig,
    objective: &mut dyn FnMut(&[f64]) -> Result<f64, String>,
) -> Result<TuneOutcome, HyperoptError> {
    space.validate()?;
    let d = space.len();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut trials: Vec<Trial> = Vec::new();
    for i in 0..cfg.n_random + cfg.n_bayes {
        let done: Vec<&Trial> = trials.iter().filter(|t| t.metric.is_some()).collect();
        let (kind, point) = if i < cfg.n_random || done.len() < 2 {
            let u: Vec<f64> = (0..d).map(|_| rng.random::<f64>()).collect();
            (TrialKind::Random, space.from_unit(&u))
        } else {
            let xs: Vec<Vec<f64>> = done.iter().map(|t| space.to_unit(&t.point)).collect();
            let ys: Vec<f64> = done.iter().map(|t| t.metric.expect("completed")).collect();
            let gp = GaussianProcess::fit(&xs, &ys)?;
            let u = maximize_ei(&gp, d, cfg.starts, &mut rng);
            (TrialKind::Bayes, space.from_unit(&u))
        };
        let start = Instant::now();
        let result = objective(&point);
        let wall_time_s = start.elapsed().as_secs_f64();
        let (metric, error) = match result {
            Ok(m) if m.is_finite() => (Some(m), None),
            Ok(m) => (None, Some(format!("non-finite metric {m}"))),
            Err(e) => (None, Some(e)),
        };
        trials.push(Trial {
            kind,
            point,
            metric,
            error,
            wall_time_s,
        });
    }
    let best = trials
        .iter()
        .enumerate()
        .filter_map(|(i, t)| t.metric.map(|m| (i, m)))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(i, _)| i);
    Ok(TuneOutcome { trials, best })
}

/// A completed or failed forecaster tuning trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub index: usize,
    pub kind: TrialKind,
    pub hp: Hyperparams,
    pub metric: Option<f64>,
    pub error: Option<String>,
    pub wall_time_s: f64,
    pub seed: u64,
    /// Where the objective stored the training history, if anywhere.
    pub history: Option<String>,
}

/// Metric and optional history location returned by a tuning objective.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialValue {
    pub metric: f64,
    pub history: Option<String>,
}

/// Tunes forecaster hyperparameters. `objective(hp, seed)` must be
/// deterministic; it receives the tuner seed for every trial. Returns the
/// best hyperparameters and every trial, or the last objective error when
/// no trial completed.
pub fn tune(
    space: &SearchSpace,
    cfg: &TunerConfig,
    objective: &mut dyn FnMut(&Hyperparams, u64) -> Result<TrialValue, String>,
) -> Result<(Hyperparams, Vec<TrialRecord>), HyperoptError> {
    // resolve names before spending any objective calls
    space.to_hyperparams(&space.from_unit(&vec![0.5; space.len()]))?;
    let mut histories: Vec<Option<String>> = Vec::new();
    let outcome = minimize(space, cfg, &mut |x| {
        let hp = space.to_hyperparams(x).map_err(|e| e.to_string())?;
        let r = objective(&hp, cfg.seed);
        histories.push(r.as_ref().ok().and_then(|v| v.history.clone()));
        r.map(|v| v.metric)
    })?;
    let records: Vec<TrialRecord> = outcome
        .trials
        .iter()
        .enumerate()
        .map(|(i, t)| TrialRecord {
            index: i,
            kind: t.kind,
            hp: space.to_hyperparams(&t.point).expect("names checked"),
            metric: t.metric,
            error: t.error.clone(),
            wall_time_s: t.wall_time_s,
            seed: cfg.seed,
            history: histories.get(i).cloned().flatten(),
        })
        .collect();
    match outcome.best {
        Some(b) => Ok((records[b].hp, records)),
        None => Err(HyperoptError::ObjectiveFailure(
            records
                .last()
                .and_then(|r| r.error.clone())
                .unwrap_or_else(|| "no trials".into()),
        )),
    }
}
