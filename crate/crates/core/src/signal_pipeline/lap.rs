use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::filter::{decimate, zero_phase_filter};
use super::{SignalError, VEHICLE_FEATURE_COUNT};

/// Position and heading channels following the vehicle features.
pub const POSE_CHANNEL_NAMES: [&str; 4] = ["pos_x", "pos_y", "pos_z", "yaw"];
pub const CHANNEL_COUNT: usize = VEHICLE_FEATURE_COUNT + POSE_CHANNEL_NAMES.len();

/// Names of all recorded channels in storage order.
pub fn channel_names() -> Vec<&'static str> {
    super::VEHICLE_FEATURE_NAMES
        .iter()
        .chain(POSE_CHANNEL_NAMES.iter())
        .copied()
        .collect()
}

/// One lap of synchronized channels at a fixed sample rate.
///
/// `channels` holds the 16 vehicle features followed by the CG global
/// position and the global yaw (unwrapped), each as a full time series.
#[derive(Debug, Clone, PartialEq)]
pub struct LapRecording {
    pub lap_id: String,
    pub sample_rate: f64,
    pub channels: Vec<Vec<f64>>,
}

impl LapRecording {
    pub fn new(
        lap_id: impl Into<String>,
        sample_rate: f64,
        channels: Vec<Vec<f64>>,
    ) -> Result<Self, SignalError> {
        let lap = Self {
            lap_id: lap_id.into(),
            sample_rate,
            channels,
        };
        lap.validate()?;
        Ok(lap)
    }

    pub fn validate(&self) -> Result<(), SignalError> {
        if self.channels.len() != CHANNEL_COUNT {
            return Err(SignalError::StatsMismatch {
                expected: CHANNEL_COUNT,
                found: self.channels.len(),
            });
        }
        let len = self.channels[0].len();
        if let Some(j) = self.channels.iter().position(|c| c.len() != len) {
            return Err(SignalError::ChannelLength {
                channel: channel_names()[j].to_string(),
                len: self.channels[j].len(),
                expected: len,
            });
        }
        if self
            .channels
            .iter()
            .any(|c| c.iter().any(|v| !v.is_finite()))
        {
            return Err(SignalError::Format(format!(
                "lap {}: non-finite sample",
                self.lap_id
            )));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.channels.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn duration(&self) -> f64 {
        self.len() as f64 / self.sample_rate
    }

    pub fn feature(&self, j: usize) -> &[f64] {
        &self.channels[j]
    }

    pub fn position(&self, i: usize) -> [f64; 3] {
        let b = VEHICLE_FEATURE_COUNT;
        [
            self.channels[b][i],
            self.channels[b + 1][i],
            self.channels[b + 2][i],
        ]
    }

    pub fn yaw(&self, i: usize) -> f64 {
        self.channels[VEHICLE_FEATURE_COUNT + 3][i]
    }

    /// Vehicle feature row at sample `i`.
    pub fn feature_row(&self, i: usize) -> [f64; VEHICLE_FEATURE_COUNT] {
        std::array::from_fn(|j| self.channels[j][i])
    }

    /// Anti-alias filters every channel at `fc` and keeps every
    /// `factor`-th sample.
    pub fn downsample(&self, fc: f64, factor: usize) -> Result<Self, SignalError> {
        let min_len = (self.sample_rate * 10.0).ceil() as usize;
        if self.len() < min_len {
            return Err(SignalError::LapTooShort {
                lap_id: self.lap_id.clone(),
                len: self.len(),
                min: min_len,
            });
        }
        let channels = self
            .channels
            .iter()
            .map(|c| zero_phase_filter(c, self.sample_rate, fc).map(|f| decimate(&f, factor)))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            lap_id: self.lap_id.clone(),
            sample_rate: self.sample_rate / factor as f64,
            channels,
        })
    }

    /// CSV with a `t` column followed by every channel, one row per sample.
    pub fn to_csv(&self) -> Result<String, SignalError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["t"];
        header.extend(channel_names());
        w.write_record(&header).map_err(csv_err)?;
        let mut row = Vec::with_capacity(CHANNEL_COUNT + 1);
        for i in 0..self.len() {
            row.clear();
            row.push((i as f64 / self.sample_rate).to_string());
            row.extend(self.channels.iter().map(|c| c[i].to_string()));
            w.write_record(&row).map_err(csv_err)?;
        }
        let bytes = w
            .into_inner()
            .map_err(|e| SignalError::Format(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    /// Parses a lap CSV. Columns may appear in any order; a `t` column is
    /// ignored, any other unknown column is rejected.
    pub fn from_csv(text: &str, lap_id: &str, sample_rate: f64) -> Result<Self, SignalError> {
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let header = r.headers().map_err(csv_err)?.clone();
        let names = channel_names();
        let mut slot = vec![None; header.len()];
        let mut seen = vec![false; CHANNEL_COUNT];
        for (col, h) in header.iter().enumerate() {
            let h = h.trim();
            if h == "t" {
                continue;
            }
            let j = names
                .iter()
                .position(|n| *n == h)
                .ok_or_else(|| SignalError::UnknownChannel(h.to_string()))?;
            if seen[j] {
                return Err(SignalError::DuplicateChannel(h.to_string()));
            }
            seen[j] = true;
            slot[col] = Some(j);
        }
        if let Some(j) = seen.iter().position(|s| !s) {
            return Err(SignalError::MissingChannel(names[j].to_string()));
        }
        let mut channels = vec![Vec::new(); CHANNEL_COUNT];
        for rec in r.records() {
            let rec = rec.map_err(csv_err)?;
            for (col, field) in rec.iter().enumerate() {
                if let Some(j) = slot.get(col).copied().flatten() {
                    let v: f64 = field.trim().parse().map_err(|e| {
                        SignalError::Format(format!("{lap_id}: column {}: {e}", names[j]))
                    })?;
                    channels[j].push(v);
                }
            }
        }
        Self::new(lap_id, sample_rate, channels)
    }
}

fn csv_err(e: csv::Error) -> SignalError {
    SignalError::Format(e.to_string())
}

/// A lap file reference inside a manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub file: String,
}

/// Lists lap files, their common sample rate and the track they were
/// driven on. Relative paths resolve against the manifest's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LapManifest {
    pub sample_rate: f64,
    pub track: String,
    pub laps: Vec<ManifestEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scenario: Option<String>,
}

impl LapManifest {
    pub fn load(path: &Path) -> Result<(Self, PathBuf), SignalError> {
        let text = std::fs::read_to_string(path)?;
        let m: Self =
            serde_json::from_str(&text).map_err(|e| SignalError::Format(e.to_string()))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok((m, base))
    }

    pub fn save(&self, path: &Path) -> Result<(), SignalError> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn resolve(base: &Path, file: &str) -> PathBuf {
        let p = Path::new(file);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            base.join(p)
        }
    }

    /// Reads every listed lap in manifest order.
    pub fn read_laps(&self, base: &Path) -> Result<Vec<LapRecording>, SignalError> {
        self.laps
            .iter()
            .map(|e| {
                let text = std::fs::read_to_string(Self::resolve(base, &e.file))?;
                LapRecording::from_csv(&text, &e.id, self.sample_rate)
            })
            .collect()
    }
}
