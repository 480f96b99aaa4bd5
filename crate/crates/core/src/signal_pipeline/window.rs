use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::lap::LapRecording;
use super::norm::NormStats;
use super::{SignalError, VEHICLE_FEATURE_COUNT};
use crate::track_geometry::{grid_search, TrackSpline, ROAD_FEATURE_COUNT};

pub const DATASET_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }
}

/// Window geometry shared by every sample of a dataset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowShape {
    pub t_p: usize,
    pub t_f: usize,
    pub p_r: usize,
    pub d_r: f64,
    pub n: usize,
    pub m: usize,
}

impl WindowShape {
    pub fn new(t_p: usize, t_f: usize, d_r: f64, p_r: usize) -> Self {
        Self {
            t_p,
            t_f,
            p_r,
            d_r,
            n: VEHICLE_FEATURE_COUNT,
            m: ROAD_FEATURE_COUNT,
        }
    }

    pub fn past_len(&self) -> usize {
        (self.t_p + 1) * self.n
    }

    pub fn road_len(&self) -> usize {
        self.p_r * self.m
    }

    pub fn future_len(&self) -> usize {
        self.t_f * self.n
    }

    pub fn stride(&self) -> usize {
        self.past_len() + self.road_len() + self.future_len()
    }
}

/// Origin of one window: lap index into `lap_ids` and the current step `k`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowOrigin {
    pub lap: u32,
    pub k: u32,
}

/// Normalized training windows stored contiguously as
/// `[past | road-ahead | future]` per sample, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowedDataset {
    pub shape: WindowShape,
    pub split: Option<Split>,
    pub stats: NormStats,
    pub lap_ids: Vec<String>,
    pub origins: Vec<WindowOrigin>,
    pub data: Vec<f32>,
    /// Free-form provenance recorded in the sidecar (source manifest, track).
    pub source: serde_json::Value,
}

impl WindowedDataset {
    pub fn len(&self) -> usize {
        self.origins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.origins.is_empty()
    }

    fn sample(&self, i: usize) -> &[f32] {
        let st = self.shape.stride();
        &self.data[i * st..(i + 1) * st]
    }

    /// `(t_P + 1) × n`, last row is time `k`.
    pub fn past(&self, i: usize) -> &[f32] {
        &self.sample(i)[..self.shape.past_len()]
    }

    /// `p_R × m` road-ahead rows.
    pub fn road(&self, i: usize) -> &[f32] {
        let p = self.shape.past_len();
        &self.sample(i)[p..p + self.shape.road_len()]
    }

    /// `t_F × n` ground truth.
    pub fn future(&self, i: usize) -> &[f32] {
        let p = self.shape.past_len() + self.shape.road_len();
        &self.sample(i)[p..]
    }

    pub fn lap_id(&self, i: usize) -> &str {
        &self.lap_ids[self.origins[i].lap as usize]
    }

    pub fn with_split(mut self, split: Split) -> Self {
        self.split = Some(split);
        self
    }

    /// Concatenates datasets with identical shape and statistics.
    pub fn concat(parts: &[&WindowedDataset]) -> Result<Self, SignalError> {
        let first = parts.first().ok_or(SignalError::NoLaps)?;
        let mut out = WindowedDataset {
            shape: first.shape,
            split: first.split,
            stats: first.stats.clone(),
            lap_ids: Vec::new(),
            origins: Vec::new(),
            data: Vec::new(),
            source: first.source.clone(),
        };
        for p in parts {
            if p.shape != first.shape || p.stats != first.stats {
                return Err(SignalError::Format(
                    "datasets disagree on shape or stats".into(),
                ));
            }
            let off = out.lap_ids.len() as u32;
            out.lap_ids.extend(p.lap_ids.iter().cloned());
            out.origins.extend(p.origins.iter().map(|o| WindowOrigin {
                lap: o.lap + off,
                k: o.k,
            }));
            out.data.extend_from_slice(&p.data);
            if p.split != first.split {
                out.split = None;
            }
        }
        Ok(out)
    }

    /// Writes `<stem>.bin` (little-endian f32) and `<stem>.json`.
    pub fn save(&self, dir: &Path, stem: &str) -> Result<(), SignalError> {
        std::fs::create_dir_all(dir)?;
        let mut bytes = Vec::with_capacity(self.data.len() * 4);
        for v in &self.data {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        std::fs::write(dir.join(format!("{stem}.bin")), bytes)?;
        let side = Sidecar {
            format: "drivecast-windows".into(),
            version: DATASET_FORMAT_VERSION,
            shape: self.shape,
            count: self.len(),
            split: self.split,
            stats: self.stats.clone(),
            lap_ids: self.lap_ids.clone(),
            origins: self.origins.clone(),
            source: self.source.clone(),
        };
        let text = serde_json::to_string_pretty(&side).expect("sidecar serializes");
        std::fs::write(dir.join(format!("{stem}.json")), text)?;
        Ok(())
    }

    pub fn load(dir: &Path, stem: &str) -> Result<Self, SignalError> {
        let text = std::fs::read_to_string(dir.join(format!("{stem}.json")))?;
        let side: Sidecar =
            serde_json::from_str(&text).map_err(|e| SignalError::Format(e.to_string()))?;
        if side.version != DATASET_FORMAT_VERSION {
            return Err(SignalError::Format(format!(
                "unsupported dataset version {}",
                side.version
            )));
        }
        let bytes = std::fs::read(dir.join(format!("{stem}.bin")))?;
        let want = side.count * side.shape.stride() * 4;
        if bytes.len() != want || side.origins.len() != side.count {
            return Err(SignalError::Format(format!(
                "dataset payload has {} bytes, sidecar implies {want}",
                bytes.len()
            )));
        }
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Ok(Self {
            shape: side.shape,
            split: side.split,
            stats: side.stats,
            lap_ids: side.lap_ids,
            origins: side.origins,
            data,
            source: side.source,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    format: String,
    version: u32,
    shape: WindowShape,
    count: usize,
    split: Option<Split>,
    stats: NormStats,
    lap_ids: Vec<String>,
    origins: Vec<WindowOrigin>,
    #[serde(default)]
    source: serde_json::Value,
}

/// Centerline abscissa of every sample, tracked by warm-started projection.
pub fn project_lap(lap: &LapRecording, track: &TrackSpline) -> Result<Vec<f64>, SignalError> {
    let mut out = Vec::with_capacity(lap.len());
    if lap.is_empty() {
        return Ok(out);
    }
    let mut hint = grid_search(track.centerline(), lap.position(0), 1.0).s;
    for i in 0..lap.len() {
        let s = track.project_to_centerline(lap.position(i), hint)?;
        out.push(s);
        hint = s;
    }
    Ok(out)
}

/// Slices each lap into windows with unit stride and attaches the
/// normalized road ahead of each current position.
pub fn make_windows(
    laps: &[LapRecording],
    track: &TrackSpline,
    shape: WindowShape,
    stats: &NormStats,
) -> Result<WindowedDataset, SignalError> {
    stats.check()?;
    let WindowShape {
        t_p,
        t_f,
        p_r,
        d_r,
        n,
        ..
    } = shape;
    if t_p == 0 || t_f == 0 || n != VEHICLE_FEATURE_COUNT {
        return Err(SignalError::Format(format!(
            "window shape needs t_P ≥ 1, t_F ≥ 1, n = {VEHICLE_FEATURE_COUNT}"
        )));
    }
    let mut ds = WindowedDataset {
        shape,
        split: None,
        stats: stats.clone(),
        lap_ids: Vec::with_capacity(laps.len()),
        origins: Vec::new(),
        data: Vec::new(),
        source: serde_json::Value::Null,
    };
    for (li, lap) in laps.iter().enumerate() {
        lap.validate()?;
        let len = lap.len();
        if len < t_p + t_f + 1 {
            return Err(SignalError::LapTooShort {
                lap_id: lap.lap_id.clone(),
                len,
                min: t_p + t_f + 1,
            });
        }
        ds.lap_ids.push(lap.lap_id.clone());
        let z: Vec<[f32; VEHICLE_FEATURE_COUNT]> = (0..len)
            .map(|i| {
                let row = lap.feature_row(i);
                std::array::from_fn(|j| stats.normalize_vehicle(j, row[j]) as f32)
            })
            .collect();
        let s = project_lap(lap, track)?;
        let count = len - t_p - t_f;
        ds.data.reserve(count * shape.stride());
        for k in t_p..len - t_f {
            for row in &z[k - t_p..=k] {
                ds.data.extend_from_slice(row);
            }
            let road = track.sample_road_ahead(s[k], d_r, p_r)?;
            for r in &road.rows {
                for (c, v) in r.iter().enumerate() {
                    ds.data.push(stats.normalize_road(c, *v) as f32);
                }
            }
            for row in &z[k + 1..=k + t_f] {
                ds.data.extend_from_slice(row);
            }
            ds.origins.push(WindowOrigin {
                lap: li as u32,
                k: k as u32,
            });
        }
    }
    Ok(ds)
}

/// Seeded random partition of `0..n_laps` into train/validation/test sets,
/// each returned in ascending order.
pub fn split_laps(
    n_laps: usize,
    counts: (usize, usize, usize),
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>, Vec<usize>), SignalError> {
    let (a, b, c) = counts;
    if a + b + c != n_laps || a == 0 {
        return Err(SignalError::BadRatios {
            train: a,
            validation: b,
            test: c,
            laps: n_laps,
        });
    }
    let mut idx: Vec<usize> = (0..n_laps).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut train = idx[..a].to_vec();
    let mut val = idx[a..a + b].to_vec();
    let mut test = idx[a + b..].to_vec();
    train.sort_unstable();
    val.sort_unstable();
    test.sort_unstable();
    Ok((train, val, test))
}
