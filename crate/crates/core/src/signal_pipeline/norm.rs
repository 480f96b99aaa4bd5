use serde::{Deserialize, Serialize};

use super::lap::LapRecording;
use super::{SignalError, VEHICLE_FEATURE_COUNT, VEHICLE_FEATURE_NAMES};
use crate::track_geometry::{TrackSpline, ROAD_FEATURE_COUNT, ROAD_FEATURE_NAMES};

/// Smallest standard deviation accepted for a vehicle channel.
pub const MIN_STD: f64 = 1e-12;
/// Road channels whose spread is below this fraction of their magnitude
/// are spline round-off around a constant and get unit scale.
const ROAD_RELATIVE_STD: f64 = 1e-6;

/// Z-score statistics of the vehicle and road features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub vehicle_mean: Vec<f64>,
    pub vehicle_std: Vec<f64>,
    pub road_mean: Vec<f64>,
    pub road_std: Vec<f64>,
}

fn mean_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let mut n = 0usize;
    let mut sum = 0.0;
    for v in values.clone() {
        sum += v;
        n += 1;
    }
    let mean = sum / n as f64;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
    (mean, var.sqrt())
}

/// Population statistics over the concatenation of `laps`.
///
/// With a track, road statistics are taken over the road features at every
/// sample's projected abscissa; a (numerically) constant road channel
/// gets unit scale. Without one, road features pass through unscaled.
pub fn fit_norm_stats(
    laps: &[LapRecording],
    track: Option<&TrackSpline>,
) -> Result<NormStats, SignalError> {
    if laps.is_empty() {
        return Err(SignalError::NoLaps);
    }
    let mut vehicle_mean = Vec::with_capacity(VEHICLE_FEATURE_COUNT);
    let mut vehicle_std = Vec::with_capacity(VEHICLE_FEATURE_COUNT);
    for j in 0..VEHICLE_FEATURE_COUNT {
        let (m, s) = mean_std(laps.iter().flat_map(|l| l.feature(j).iter().copied()));
        if !(s > MIN_STD) {
            return Err(SignalError::ConstantChannel(
                VEHICLE_FEATURE_NAMES[j].to_string(),
            ));
        }
        vehicle_mean.push(m);
        vehicle_std.push(s);
    }
    let (road_mean, road_std) = match track {
        None => (vec![0.0; ROAD_FEATURE_COUNT], vec![1.0; ROAD_FEATURE_COUNT]),
        Some(track) => {
            let mut rows = Vec::new();
            for lap in laps {
                for s in super::window::project_lap(lap, track)? {
                    rows.push(track.road_features_at(s)?.to_array());
                }
            }
            let mut mean = Vec::with_capacity(ROAD_FEATURE_COUNT);
            let mut std = Vec::with_capacity(ROAD_FEATURE_COUNT);
            for c in 0..ROAD_FEATURE_COUNT {
                let (m, s) = mean_std(rows.iter().map(|r| r[c]));
                mean.push(m);
                std.push(if s > ROAD_RELATIVE_STD * m.abs().max(1e-3) {
                    s
                } else {
                    1.0
                });
            }
            (mean, std)
        }
    };
    Ok(NormStats {
        vehicle_mean,
        vehicle_std,
        road_mean,
        road_std,
    })
}

impl NormStats {
    pub fn check(&self) -> Result<(), SignalError> {
        for (v, want) in [
            (&self.vehicle_mean, VEHICLE_FEATURE_COUNT),
            (&self.vehicle_std, VEHICLE_FEATURE_COUNT),
            (&self.road_mean, ROAD_FEATURE_COUNT),
            (&self.road_std, ROAD_FEATURE_COUNT),
        ] {
            if v.len() != want {
                return Err(SignalError::StatsMismatch {
                    expected: want,
                    found: v.len(),
                });
            }
        }
        if let Some(j) = self.vehicle_std.iter().position(|s| !(*s > 0.0)) {
            return Err(SignalError::ConstantChannel(
                VEHICLE_FEATURE_NAMES[j].to_string(),
            ));
        }
        if let Some(j) = self.road_std.iter().position(|s| !(*s > 0.0)) {
            return Err(SignalError::ConstantChannel(
                ROAD_FEATURE_NAMES[j].to_string(),
            ));
        }
        Ok(())
    }

    #[inline]
    pub fn normalize_vehicle(&self, j: usize, v: f64) -> f64 {
        (v - self.vehicle_mean[j]) / self.vehicle_std[j]
    }

    #[inline]
    pub fn denormalize_vehicle(&self, j: usize, z: f64) -> f64 {
        z * self.vehicle_std[j] + self.vehicle_mean[j]
    }

    #[inline]
    pub fn normalize_road(&self, c: usize, v: f64) -> f64 {
        (v - self.road_mean[c]) / self.road_std[c]
    }
}

fn map_features(
    lap: &LapRecording,
    stats: &NormStats,
    f: impl Fn(&NormStats, usize, f64) -> f64,
) -> Result<LapRecording, SignalError> {
    stats.check()?;
    lap.validate()?;
    let mut out = lap.clone();
    for (j, ch) in out
        .channels
        .iter_mut()
        .take(VEHICLE_FEATURE_COUNT)
        .enumerate()
    {
        for v in ch.iter_mut() {
            *v = f(stats, j, *v);
        }
    }
    Ok(out)
}

/// Z-scores the vehicle features; pose channels are left untouched.
pub fn normalize(lap: &LapRecording, stats: &NormStats) -> Result<LapRecording, SignalError> {
    map_features(lap, stats, NormStats::normalize_vehicle)
}

pub fn denormalize(lap: &LapRecording, stats: &NormStats) -> Result<LapRecording, SignalError> {
    map_features(lap, stats, NormStats::denormalize_vehicle)
}
