use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::{batch_from_dataset, ModelWeights, NetworkParams};
use super::{ForecastError, Hyperparams, VEHICLE_FEATURE_NAMES};
use crate::neural_core::ParamSet;
use crate::signal_pipeline::{NormStats, WindowedDataset};

pub const MODEL_MAGIC: &[u8; 8] = b"DRVCAST\0";
pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    version: u32,
    hp: Hyperparams,
    t_f: usize,
    p_r: usize,
    d_r: f64,
    n: usize,
    m: usize,
    u_e: usize,
    u_d: usize,
    param_count: usize,
    stats: NormStats,
}

impl ModelWeights {
    /// `magic | u32 header length | JSON header | f64 LE parameters`.
    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            version: MODEL_FORMAT_VERSION,
            hp: self.hp,
            t_f: self.t_f,
            p_r: self.p_r,
            d_r: self.d_r,
            n: self.n,
            m: self.m,
            u_e: self.hp.u_e(),
            u_d: self.hp.u_d(),
            param_count: self.param_count(),
            stats: self.stats.clone(),
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(12 + json.len() + 8 * header.param_count);
        out.extend_from_slice(MODEL_MAGIC);
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        self.params.visit(&mut |b| {
            for v in b {
                out.extend_from_slice(&v.to_le_bytes());
            }
        });
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ForecastError> {
        let fail = |m: &str| ForecastError::Format(m.to_string());
        if bytes.len() < 12 || &bytes[..8] != MODEL_MAGIC {
            return Err(fail("missing model file magic"));
        }
        let hlen = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
        let body = bytes
            .get(12..12 + hlen)
            .ok_or_else(|| fail("truncated header"))?;
        let probe: serde_json::Value =
            serde_json::from_slice(body).map_err(|e| ForecastError::Format(e.to_string()))?;
        let version = probe.get("version").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
        if version != MODEL_FORMAT_VERSION {
            return Err(ForecastError::FormatVersionMismatch {
                found: version,
                expected: MODEL_FORMAT_VERSION,
            });
        }
        let h: Header =
            serde_json::from_value(probe).map_err(|e| ForecastError::Format(e.to_string()))?;
        h.hp.validate()?;
        h.stats
            .check()
            .map_err(|e| ForecastError::Format(e.to_string()))?;
        if h.u_e != h.hp.u_e()
            || h.u_d != h.hp.u_d()
            || h.n != h.stats.vehicle_mean.len()
            || h.m != h.stats.road_mean.len()
        {
            return Err(fail("header shapes are inconsistent"));
        }
        let mut params = NetworkParams::init(&h.hp, h.n, h.m, &mut ChaCha8Rng::seed_from_u64(0));
        if params.param_count() != h.param_count {
            return Err(fail("parameter count disagrees with shapes"));
        }
        let payload = &bytes[12 + hlen..];
        if payload.len() != 8 * h.param_count {
            return Err(fail(&format!(
                "payload has {} bytes, expected {}",
                payload.len(),
                8 * h.param_count
            )));
        }
        let flat: Vec<f64> = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        if flat.iter().any(|v| !v.is_finite()) {
            return Err(fail("non-finite weight"));
        }
        params.assign(&flat);
        Ok(Self {
            hp: h.hp,
            t_f: h.t_f,
            p_r: h.p_r,
            d_r: h.d_r,
            n: h.n,
            m: h.m,
            stats: h.stats,
            params,
        })
    }

    /// Writes through a temporary file so a failed write never leaves a
    /// partial model at `path`.
    pub fn save(&self, path: &Path) -> Result<(), ForecastError> {
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, self.to_bytes())?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ForecastError> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

/// Writes `k,step,feature,truth,pred` rows in physical units for the
/// windows `indices` of `ds`. `k` is only unique within one lap, so callers
/// pass the windows of a single lap per file.
pub fn write_predictions_csv<W: Write>(
    model: &ModelWeights,
    ds: &WindowedDataset,
    indices: &[usize],
    out: W,
) -> Result<(), ForecastError> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| ForecastError::Format(e.to_string());
    w.write_record(["k", "step", "feature", "truth", "pred"])
        .map_err(io)?;
    for chunk in indices.chunks(256) {
        let b = batch_from_dataset(ds, chunk);
        let pred = model.predict_batch(&b.past, &b.road)?;
        let truth = b.future.expect("dataset batches carry targets");
        for (bi, &i) in chunk.iter().enumerate() {
            let k = ds.origins[i].k.to_string();
            for step in 0..model.t_f {
                for j in 0..model.n {
                    let t = model.stats.denormalize_vehicle(j, truth.get(bi, step, j));
                    let p = model.stats.denormalize_vehicle(j, pred.get(bi, step, j));
                    w.write_record([
                        &k,
                        &(step + 1).to_string(),
                        VEHICLE_FEATURE_NAMES[j],
                        &t.to_string(),
                        &p.to_string(),
                    ])
                    .map_err(io)?;
                }
            }
        }
    }
    w.flush()?;
    Ok(())
}
