//! Per-window scoring, the evaluation report and the trace/window tables.

use std::collections::BTreeMap;

use anyhow::Result;
use drivecast_core::forecaster::{
    batch_from_dataset, mae_metric, wmse_loss, ModelWeights, PRIMARY_INDICES,
    VEHICLE_FEATURE_COUNT, VEHICLE_FEATURE_NAMES,
};
use drivecast_core::neural_core::Tensor2;
use drivecast_core::signal_pipeline::{WindowedDataset, DECIMATION, RAW_SAMPLE_RATE};
use serde::{Deserialize, Serialize};

use crate::error::HarnessError;

/// Sample rate of prepared windows (Hz).
pub const WINDOW_RATE: f64 = RAW_SAMPLE_RATE / DECIMATION as f64;

/// Produces normalized `t_F × n` forecasts for dataset windows.
pub trait Predictor {
    fn label(&self) -> &'static str;
    /// Row-major `indices.len() × t_F × n`.
    fn predict(&self, ds: &WindowedDataset, indices: &[usize]) -> Result<Vec<f64>>;
}

pub struct ModelPredictor<'a>(pub &'a ModelWeights);

impl Predictor for ModelPredictor<'_> {
    fn label(&self) -> &'static str {
        "model"
    }

    fn predict(&self, ds: &WindowedDataset, indices: &[usize]) -> Result<Vec<f64>> {
        check_shape(self.0, ds)?;
        let mut out = Vec::with_capacity(indices.len() * ds.shape.future_len());
        for chunk in indices.chunks(256) {
            let b = batch_from_dataset(ds, chunk);
            out.extend(self.0.predict_batch(&b.past, &b.road)?.data);
        }
        Ok(out)
    }
}

/// Repeats the last observed row over the horizon.
pub struct ConstantHold;

impl Predictor for ConstantHold {
    fn label(&self) -> &'static str {
        "hold"
    }

    fn predict(&self, ds: &WindowedDataset, indices: &[usize]) -> Result<Vec<f64>> {
        Ok(indices.iter().flat_map(|&i| hold_rows(ds, i)).collect())
    }
}

/// Returns the ground truth.
pub struct Oracle;

impl Predictor for Oracle {
    fn label(&self) -> &'static str {
        "oracle"
    }

    fn predict(&self, ds: &WindowedDataset, indices: &[usize]) -> Result<Vec<f64>> {
        Ok(indices
            .iter()
            .flat_map(|&i| ds.future(i).iter().map(|&v| f64::from(v)))
            .collect())
    }
}

fn hold_rows(ds: &WindowedDataset, i: usize) -> Vec<f64> {
    let s = ds.shape;
    let last = &ds.past(i)[s.t_p * s.n..];
    (0..s.t_f)
        .flat_map(|_| last.iter().map(|&v| f64::from(v)))
        .collect()
}

pub fn check_shape(model: &ModelWeights, ds: &WindowedDataset) -> Result<()> {
    let s = ds.shape;
    let ok = s.t_p == model.hp.t_p
        && s.t_f == model.t_f
        && s.p_r == model.p_r
        && s.n == model.n
        && s.m == model.m
        && (s.d_r - model.d_r).abs() <= 1e-9 * model.d_r.abs().max(1.0);
    if ok {
        return Ok(());
    }
    let fmt = |t_p: usize, t_f: usize, p_r: usize, d_r: f64, n: usize, m: usize| {
        format!("t_P {t_p}, t_F {t_f}, p_R {p_r}, d_R {d_r}, n {n}, m {m}")
    };
    Err(HarnessError::ShapeMismatch {
        expected: fmt(
            model.hp.t_p,
            model.t_f,
            model.p_r,
            model.d_r,
            model.n,
            model.m,
        ),
        found: fmt(s.t_p, s.t_f, s.p_r, s.d_r, s.n, s.m),
    }
    .into())
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowScore {
    pub split: String,
    pub lap: String,
    pub k: usize,
    pub loss: f64,
    pub metric: f64,
    pub baseline_loss: f64,
    pub baseline_metric: f64,
    /// Mean absolute error of every feature over the horizon, physical units.
    pub feature_mae: [f64; VEHICLE_FEATURE_COUNT],
}

pub struct Scored {
    pub scores: Vec<WindowScore>,
    /// Normalized forecasts, `windows × t_F × n`.
    pub pred: Vec<f64>,
}

/// Scores every window of `ds`; `w` is the secondary-feature loss weight.
pub fn score_windows(
    p: &dyn Predictor,
    ds: &WindowedDataset,
    w: f64,
    split: &str,
) -> Result<Scored> {
    let s = ds.shape;
    let idx: Vec<usize> = (0..ds.len()).collect();
    let pred = p.predict(ds, &idx)?;
    let per = s.future_len();
    if pred.len() != ds.len() * per {
        return Err(HarnessError::ShapeMismatch {
            expected: format!("{} forecast values", ds.len() * per),
            found: pred.len().to_string(),
        }
        .into());
    }
    let mut scores = Vec::with_capacity(ds.len());
    for i in 0..ds.len() {
        let truth: Vec<f64> = ds.future(i).iter().map(|&v| f64::from(v)).collect();
        let pi = pred[i * per..(i + 1) * per].to_vec();
        let hold = hold_rows(ds, i);
        let mut feature_mae = [0.0; VEHICLE_FEATURE_COUNT];
        for (j, f) in feature_mae.iter_mut().enumerate() {
            let sum: f64 = (0..s.t_f)
                .map(|t| (pi[t * s.n + j] - truth[t * s.n + j]).abs())
                .sum();
            *f = sum / s.t_f as f64 * ds.stats.vehicle_std[j];
        }
        let t = Tensor2::from_vec(s.t_f, s.n, truth)?;
        let pt = Tensor2::from_vec(s.t_f, s.n, pi)?;
        let ht = Tensor2::from_vec(s.t_f, s.n, hold)?;
        scores.push(WindowScore {
            split: split.to_string(),
            lap: ds.lap_id(i).to_string(),
            k: ds.origins[i].k as usize,
            loss: wmse_loss(&pt, &t, w)?,
            metric: mae_metric(&pt, &t)?,
            baseline_loss: wmse_loss(&ht, &t, w)?,
            baseline_metric: mae_metric(&ht, &t)?,
            feature_mae,
        });
    }
    Ok(Scored { scores, pred })
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (mut sum, mut n) = (0.0, 0usize);
    for v in values {
        sum += v;
        n += 1;
    }
    if n == 0 {
        f64::NAN
    } else {
        sum / n as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSummary {
    pub windows: usize,
    pub loss: f64,
    pub metric: f64,
    pub baseline_loss: f64,
    pub baseline_metric: f64,
    /// `metric / baseline_metric`.
    pub metric_ratio: f64,
}

impl SplitSummary {
    pub fn from_scores(scores: &[WindowScore]) -> Self {
        let metric = mean(scores.iter().map(|s| s.metric));
        let baseline_metric = mean(scores.iter().map(|s| s.baseline_metric));
        Self {
            windows: scores.len(),
            loss: mean(scores.iter().map(|s| s.loss)),
            metric,
            baseline_loss: mean(scores.iter().map(|s| s.baseline_loss)),
            baseline_metric,
            metric_ratio: metric / baseline_metric,
        }
    }
}

/// Mean over windows of each feature's MAE, keyed by feature name.
pub fn feature_mae(scores: &[WindowScore]) -> BTreeMap<String, f64> {
    (0..VEHICLE_FEATURE_COUNT)
        .map(|j| {
            (
                VEHICLE_FEATURE_NAMES[j].to_string(),
                mean(scores.iter().map(|s| s.feature_mae[j])),
            )
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub std: Option<f64>,
}

impl MeanStd {
    /// Sample mean and, for two or more values, sample standard deviation.
    pub fn of(values: &[f64]) -> Self {
        let m = mean(values.iter().copied());
        let std = (values.len() >= 2).then(|| {
            let ss: f64 = values.iter().map(|v| (v - m) * (v - m)).sum();
            (ss / (values.len() - 1) as f64).sqrt()
        });
        Self { mean: m, std }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossvalStats {
    pub repeats: usize,
    pub seeds: Vec<u64>,
    pub train_loss: MeanStd,
    pub train_metric: MeanStd,
    pub validation_loss: MeanStd,
    pub validation_metric: MeanStd,
    pub validation_baseline_metric: MeanStd,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_metric: Option<MeanStd>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimingStats {
    pub windows: usize,
    pub mean_ms: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub std_ms: Option<f64>,
    pub min_ms: f64,
    pub max_ms: f64,
}

impl TimingStats {
    pub fn of(ms: &[f64]) -> Self {
        let ms_stats = MeanStd::of(ms);
        Self {
            windows: ms.len(),
            mean_ms: ms_stats.mean,
            std_ms: ms_stats.std,
            min_ms: ms.iter().copied().fold(f64::INFINITY, f64::min),
            max_ms: ms.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub predictor: String,
    pub splits: BTreeMap<String, SplitSummary>,
    /// Split the per-feature errors are taken over.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mae_split: Option<String>,
    /// Physical-unit MAE of the forecast targets.
    #[serde(default)]
    pub primary_mae: BTreeMap<String, f64>,
    /// Physical-unit MAE of every feature.
    #[serde(default)]
    pub feature_mae: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub crossval: Option<CrossvalStats>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timing: Option<TimingStats>,
}

impl EvaluationReport {
    /// Summaries of every split in `scores`, per-feature errors over
    /// `mae_split`.
    pub fn from_scores(predictor: &str, scores: &[WindowScore], mae_split: &str) -> Self {
        let mut names: Vec<&str> = Vec::new();
        for s in scores {
            if !names.contains(&s.split.as_str()) {
                names.push(&s.split);
            }
        }
        let splits = names
            .iter()
            .map(|n| {
                let part: Vec<WindowScore> =
                    scores.iter().filter(|s| s.split == *n).cloned().collect();
                (n.to_string(), SplitSummary::from_scores(&part))
            })
            .collect();
        let focus: Vec<WindowScore> = scores
            .iter()
            .filter(|s| s.split == mae_split)
            .cloned()
            .collect();
        let feature = feature_mae(&focus);
        let primary = PRIMARY_INDICES
            .iter()
            .map(|&j| {
                let name = VEHICLE_FEATURE_NAMES[j].to_string();
                let v = feature[&name];
                (name, v)
            })
            .collect();
        Self {
            predictor: predictor.to_string(),
            splits,
            mae_split: Some(mae_split.to_string()),
            primary_mae: primary,
            feature_mae: feature,
            crossval: None,
            timing: None,
        }
    }
}

const SCORE_COLUMNS: [&str; 7] = [
    "split",
    "lap",
    "k",
    "loss",
    "metric",
    "baseline_loss",
    "baseline_metric",
];

pub fn scores_to_csv(scores: &[WindowScore]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<String> = SCORE_COLUMNS.iter().map(|s| s.to_string()).collect();
    header.extend(VEHICLE_FEATURE_NAMES.iter().map(|n| format!("mae_{n}")));
    w.write_record(&header)?;
    for s in scores {
        let mut row = vec![
            s.split.clone(),
            s.lap.clone(),
            s.k.to_string(),
            s.loss.to_string(),
            s.metric.to_string(),
            s.baseline_loss.to_string(),
            s.baseline_metric.to_string(),
        ];
        row.extend(s.feature_mae.iter().map(|v| v.to_string()));
        w.write_record(&row)?;
    }
    Ok(String::from_utf8(w.into_inner()?)?)
}

pub fn scores_from_csv(text: &str) -> Result<Vec<WindowScore>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let f = |i: usize| -> Result<f64> { Ok(rec[i].parse::<f64>()?) };
        let mut feature_mae = [0.0; VEHICLE_FEATURE_COUNT];
        for (j, v) in feature_mae.iter_mut().enumerate() {
            *v = f(SCORE_COLUMNS.len() + j)?;
        }
        out.push(WindowScore {
            split: rec[0].to_string(),
            lap: rec[1].to_string(),
            k: rec[2].parse()?,
            loss: f(3)?,
            metric: f(4)?,
            baseline_loss: f(5)?,
            baseline_metric: f(6)?,
            feature_mae,
        });
    }
    Ok(out)
}

pub fn per_feature_csv(feature: &BTreeMap<String, f64>) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["feature", "primary", "mae"])?;
    for (j, name) in VEHICLE_FEATURE_NAMES.iter().enumerate() {
        let primary = PRIMARY_INDICES.contains(&j);
        w.write_record([
            name.to_string(),
            primary.to_string(),
            feature[*name].to_string(),
        ])?;
    }
    Ok(String::from_utf8(w.into_inner()?)?)
}

/// Columns of the lap trace table for the forecast targets.
pub fn trace_columns() -> Vec<String> {
    let mut cols = vec!["index".to_string(), "time_s".to_string()];
    for &j in &PRIMARY_INDICES {
        cols.push(format!("{}_truth", VEHICLE_FEATURE_NAMES[j]));
        cols.push(format!("{}_pred", VEHICLE_FEATURE_NAMES[j]));
    }
    cols
}

/// For each window of lap `lap` (index into `ds.lap_ids`), the sample at
/// `k + t_F` next to the forecast made `t_F` steps earlier, physical units.
pub fn trace_csv(ds: &WindowedDataset, pred: &[f64], lap: usize) -> Result<String> {
    let s = ds.shape;
    let per = s.future_len();
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(trace_columns())?;
    for i in (0..ds.len()).filter(|&i| ds.origins[i].lap as usize == lap) {
        let index = ds.origins[i].k as usize + s.t_f;
        let row = (s.t_f - 1) * s.n;
        let mut rec = vec![index.to_string(), (index as f64 / WINDOW_RATE).to_string()];
        for &j in &PRIMARY_INDICES {
            let t = f64::from(ds.future(i)[row + j]);
            let p = pred[i * per + row + j];
            rec.push(ds.stats.denormalize_vehicle(j, t).to_string());
            rec.push(ds.stats.denormalize_vehicle(j, p).to_string());
        }
        w.write_record(&rec)?;
    }
    Ok(String::from_utf8(w.into_inner()?)?)
}

/// One full window in physical units: the past (truth only) and the
/// horizon with truth, forecast and constant hold.
pub fn window_csv(ds: &WindowedDataset, pred: &[f64], i: usize) -> Result<String> {
    let s = ds.shape;
    let per = s.future_len();
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["step".to_string(), "time_s".to_string()];
    for &j in &PRIMARY_INDICES {
        let n = VEHICLE_FEATURE_NAMES[j];
        header.extend([
            format!("{n}_truth"),
            format!("{n}_pred"),
            format!("{n}_hold"),
        ]);
    }
    w.write_record(&header)?;
    let last = &ds.past(i)[s.t_p * s.n..];
    for step in -(s.t_p as i64)..=s.t_f as i64 {
        let mut rec = vec![step.to_string(), (step as f64 / WINDOW_RATE).to_string()];
        for &j in &PRIMARY_INDICES {
            let dn = |z: f64| ds.stats.denormalize_vehicle(j, z).to_string();
            if step <= 0 {
                let r = (s.t_p as i64 + step) as usize;
                rec.push(dn(f64::from(ds.past(i)[r * s.n + j])));
                rec.push(String::new());
                rec.push(String::new());
            } else {
                let r = (step - 1) as usize;
                rec.push(dn(f64::from(ds.future(i)[r * s.n + j])));
                rec.push(dn(pred[i * per + r * s.n + j]));
                rec.push(dn(f64::from(last[j])));
            }
        }
        w.write_record(&rec)?;
    }
    Ok(String::from_utf8(w.into_inner()?)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_value_has_no_spread() {
        let m = MeanStd::of(&[2.5]);
        assert_eq!(m.mean, 2.5);
        assert!(m.std.is_none());
        let json = serde_json::to_string(&m).unwrap();
        assert!(!json.contains("std"));
        assert_eq!(MeanStd::of(&[1.0, 1.0]).std, Some(0.0));
        assert_eq!(MeanStd::of(&[1.0, 3.0]).std, Some(2f64.sqrt()));
    }
}
