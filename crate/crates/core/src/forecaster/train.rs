use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::{batch_from_dataset, ModelWeights};
use super::{feature_weights, mae_slice, wmse_slice, ForecastError};
use crate::neural_core::{adam_step, AdamState, ParamSet, Tensor3};
use crate::signal_pipeline::WindowedDataset;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Phase1Schedule {
    pub lr_start: f64,
    pub lr_end: f64,
    pub decay_epochs: usize,
    pub max_epochs: usize,
    pub patience: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Phase2Schedule {
    pub lr: f64,
    pub max_epochs: usize,
    pub patience: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainingSchedule {
    pub phase1: Phase1Schedule,
    pub phase2: Phase2Schedule,
    pub batch_size: usize,
}

impl Default for TrainingSchedule {
    fn default() -> Self {
        Self {
            phase1: Phase1Schedule {
                lr_start: 0.001,
                lr_end: 0.0005,
                decay_epochs: 34,
                max_epochs: 100,
                patience: 25,
            },
            phase2: Phase2Schedule {
                lr: 0.0001,
                max_epochs: 500,
                patience: 25,
            },
            batch_size: 64,
        }
    }
}

impl TrainingSchedule {
    /// Phase-1 rate at zero-based epoch `e`: geometric interpolation from
    /// `lr_start` to `lr_end` over `decay_epochs`, constant afterwards.
    pub fn phase1_lr(&self, e: usize) -> f64 {
        let p = &self.phase1;
        if p.decay_epochs == 0 || p.lr_start == 0.0 {
            return p.lr_end;
        }
        let frac = e.min(p.decay_epochs) as f64 / p.decay_epochs as f64;
        p.lr_start * (p.lr_end / p.lr_start).powf(frac)
    }

    pub fn validate(&self) -> Result<(), ForecastError> {
        let p1 = &self.phase1;
        let p2 = &self.phase2;
        let ok = p1.lr_start >= 0.0
            && p1.lr_end >= 0.0
            && p2.lr >= 0.0
            && self.batch_size > 0
            && p1.patience >= 1
            && p2.patience >= 1;
        if !ok {
            return Err(ForecastError::InvalidHyperparams(format!("{self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1 or 2.
    pub phase: u8,
    /// One-based epoch within the phase.
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_metric: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    /// Index into `epochs` of the restored weights.
    pub best_index: usize,
    pub best_val_metric: f64,
    pub phase1_epochs: usize,
    pub phase2_epochs: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub loss: f64,
    pub metric: f64,
    pub windows: usize,
}

const EVAL_BATCH: usize = 256;

/// Aggregated loss and metric of `model` on every window of `ds`.
pub fn evaluate(model: &ModelWeights, ds: &WindowedDataset) -> Result<EvalSummary, ForecastError> {
    if ds.is_empty() {
        return Err(ForecastError::EmptySet);
    }
    let weights = feature_weights(model.n, model.hp.w);
    let per = model.t_f * model.n;
    let (mut loss, mut metric) = (0.0, 0.0);
    let idx: Vec<usize> = (0..ds.len()).collect();
    for chunk in idx.chunks(EVAL_BATCH) {
        let b = batch_from_dataset(ds, chunk);
        let pred = model.predict_batch(&b.past, &b.road)?;
        let truth = b.future.expect("dataset batches carry targets");
        for k in 0..chunk.len() {
            let p = &pred.data[k * per..(k + 1) * per];
            let t = &truth.data[k * per..(k + 1) * per];
            loss += wmse_slice(p, t, &weights);
            metric += mae_slice(p, t, model.n);
        }
    }
    Ok(EvalSummary {
        loss: loss / ds.len() as f64,
        metric: metric / ds.len() as f64,
        windows: ds.len(),
    })
}

/// Aggregated metric of repeating the last past row over the horizon.
pub fn constant_hold_metric(ds: &WindowedDataset) -> Result<f64, ForecastError> {
    if ds.is_empty() {
        return Err(ForecastError::EmptySet);
    }
    let s = ds.shape;
    let mut total = 0.0;
    for i in 0..ds.len() {
        let last = &ds.past(i)[s.t_p * s.n..];
        let fut = ds.future(i);
        let hold: Vec<f64> = (0..s.t_f)
            .flat_map(|_| last.iter().map(|&v| f64::from(v)))
            .collect();
        let truth: Vec<f64> = fut.iter().map(|&v| f64::from(v)).collect();
        total += mae_slice(&hold, &truth, s.n);
    }
    Ok(total / ds.len() as f64)
}

fn check_dataset(model: &ModelWeights, ds: &WindowedDataset) -> Result<(), ForecastError> {
    let s = ds.shape;
    if s.t_p != model.hp.t_p
        || s.t_f != model.t_f
        || s.p_r != model.p_r
        || s.n != model.n
        || s.m != model.m
    {
        return Err(ForecastError::InvalidHyperparams(format!(
            "dataset shape {s:?} does not match model (t_P {}, t_F {}, p_R {})",
            model.hp.t_p, model.t_f, model.p_r
        )));
    }
    Ok(())
}

/// One pass over the shuffled training windows; returns the mean
/// training-mode loss.
fn run_epoch(
    model: &mut ModelWeights,
    ds: &WindowedDataset,
    order: &[usize],
    batch_size: usize,
    lr: f64,
    adam: &mut AdamState,
    rng: &mut ChaCha8Rng,
) -> Result<f64, ForecastError> {
    let weights = feature_weights(model.n, model.hp.w);
    let per = model.t_f * model.n;
    let scale = 2.0 / model.n as f64;
    let mut total = 0.0;
    for chunk in order.chunks(batch_size) {
        let b = batch_from_dataset(ds, chunk);
        let truth = b.future.as_ref().expect("dataset batches carry targets");
        let cache = model.forward(&b.past, &b.road, true, rng)?;
        let pred = &cache.output;
        let bs = chunk.len() as f64;
        let mut d = Tensor3::zeros(pred.batch, pred.steps, pred.features);
        for k in 0..chunk.len() {
            let p = &pred.data[k * per..(k + 1) * per];
            let t = &truth.data[k * per..(k + 1) * per];
            total += wmse_slice(p, t, &weights);
            for (idx, dv) in d.data[k * per..(k + 1) * per].iter_mut().enumerate() {
                *dv = scale * weights[idx % model.n] * (p[idx] - t[idx]) / bs;
            }
        }
        let grads = model.backward(&cache, &d)?;
        adam_step(&mut model.params, &grads, adam, lr)?;
    }
    Ok(total / order.len() as f64)
}

/// Two-phase training with early stopping on the validation metric.
pub fn train(
    model: ModelWeights,
    train_ds: &WindowedDataset,
    val_ds: &WindowedDataset,
    schedule: &TrainingSchedule,
    seed: u64,
) -> Result<(ModelWeights, TrainHistory), ForecastError> {
    train_with_observer(model, train_ds, val_ds, schedule, seed, &mut |_, _| {})
}

/// [`train`] reporting every finished epoch, with the weights at its end,
/// to `observer`.
///
/// Each phase stops after `patience` consecutive epochs without a strict
/// improvement over that phase's best metric. Phase 1 ends by restoring
/// its best weights; the returned model holds the best weights seen in
/// either phase.
pub fn train_with_observer(
    mut model: ModelWeights,
    train_ds: &WindowedDataset,
    val_ds: &WindowedDataset,
    schedule: &TrainingSchedule,
    seed: u64,
    observer: &mut dyn FnMut(&EpochRecord, &ModelWeights),
) -> Result<(ModelWeights, TrainHistory), ForecastError> {
    if train_ds.is_empty() {
        return Err(ForecastError::EmptySplit("train"));
    }
    if val_ds.is_empty() {
        return Err(ForecastError::EmptySplit("validation"));
    }
    schedule.validate()?;
    check_dataset(&model, train_ds)?;
    check_dataset(&model, val_ds)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut adam = AdamState::new(model.param_count());
    let mut order: Vec<usize> = (0..train_ds.len()).collect();
    let mut history = TrainHistory {
        best_val_metric: f64::INFINITY,
        ..Default::default()
    };
    let mut global_best = model.params.flatten();

    for phase in [1u8, 2] {
        let (max_epochs, patience) = match phase {
            1 => (schedule.phase1.max_epochs, schedule.phase1.patience),
            _ => (schedule.phase2.max_epochs, schedule.phase2.patience),
        };
        let mut phase_best = f64::INFINITY;
        let mut phase_best_params: Option<Vec<f64>> = None;
        let mut stale = 0;
        let mut ran = 0;
        for e in 0..max_epochs {
            let lr = match phase {
                1 => schedule.phase1_lr(e),
                _ => schedule.phase2.lr,
            };
            order.shuffle(&mut rng);
            let train_loss = run_epoch(
                &mut model,
                train_ds,
                &order,
                schedule.batch_size,
                lr,
                &mut adam,
                &mut rng,
            )?;
            let val = evaluate(&model, val_ds)?;
            let rec = EpochRecord {
                phase,
                epoch: e + 1,
                lr,
                train_loss,
                val_loss: val.loss,
                val_metric: val.metric,
            };
            history.epochs.push(rec);
            observer(&rec, &model);
            ran += 1;
            if val.metric < phase_best {
                phase_best = val.metric;
                phase_best_params = Some(model.params.flatten());
                stale = 0;
            } else {
                stale += 1;
            }
            if val.metric < history.best_val_metric {
                history.best_val_metric = val.metric;
                history.best_index = history.epochs.len() - 1;
                global_best = model.params.flatten();
            }
            if stale >= patience {
                break;
            }
        }
        match phase {
            1 => {
                history.phase1_epochs = ran;
                if let Some(best) = phase_best_params {
                    model.params.assign(&best);
                }
            }
            _ => history.phase2_epochs = ran,
        }
    }
    model.params.assign(&global_best);
    Ok((model, history))
}
