use serde::{Deserialize, Serialize};

use super::spline::{norm, sub};
use super::{TrackError, TrackSpline};

pub const ROAD_FEATURE_COUNT: usize = 5;
/// Column order of the road-ahead matrix.
pub const ROAD_FEATURE_NAMES: [&str; ROAD_FEATURE_COUNT] = [
    "width",
    "pitch_slope",
    "bank_angle",
    "curvature_xy",
    "z_second_deriv",
];

/// The road features at one centerline abscissa.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoadFeatureSample {
    /// Distance between matched margin points (m).
    pub width: f64,
    /// dZ/ds of the centerline.
    pub pitch_slope: f64,
    /// atan((z_left − z_right) / width), positive when the left side is higher.
    pub bank_angle: f64,
    /// Signed planar curvature (1/m), positive counterclockwise.
    pub curvature_xy: f64,
    /// d²Z/ds² of the centerline (1/m).
    pub z_second_deriv: f64,
}

impl RoadFeatureSample {
    pub fn to_array(&self) -> [f64; ROAD_FEATURE_COUNT] {
        [
            self.width,
            self.pitch_slope,
            self.bank_angle,
            self.curvature_xy,
            self.z_second_deriv,
        ]
    }
}

/// Road features at `p_R` equidistant abscissae in `(s_k, s_k + d_R]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RoadAheadMatrix {
    pub rows: Vec<[f64; ROAD_FEATURE_COUNT]>,
    pub abscissae: Vec<f64>,
    pub d_r: f64,
}

impl TrackSpline {
    pub fn road_features_at(&self, s: f64) -> Result<RoadFeatureSample, TrackError> {
        let s = self.wrap(s)?;
        let c = self.centerline.eval(s);
        let l = self.left.position(s);
        let r = self.right.position(s);
        let width = norm(sub(l, r));
        let (dx, dy) = (c.d1[0], c.d1[1]);
        let (ddx, ddy) = (c.d2[0], c.d2[1]);
        let planar = dx * dx + dy * dy;
        let curvature_xy = (dx * ddy - dy * ddx) / (planar * planar.sqrt());
        Ok(RoadFeatureSample {
            width,
            pitch_slope: c.d1[2],
            bank_angle: ((l[2] - r[2]) / width).atan(),
            curvature_xy,
            z_second_deriv: c.d2[2],
        })
    }

    /// Samples the road ahead of `s_k`. Abscissae wrap modulo `L` on closed
    /// tracks; on open tracks the horizon must end before `L`.
    pub fn sample_road_ahead(
        &self,
        s_k: f64,
        d_r: f64,
        p_r: usize,
    ) -> Result<RoadAheadMatrix, TrackError> {
        if !(d_r > 0.0) || p_r == 0 {
            return Err(TrackError::InvalidHorizon { d_r, p_r });
        }
        if !self.closed && s_k + d_r >= self.length {
            return Err(TrackError::HorizonExceedsTrack {
                end: s_k + d_r,
                length: self.length,
            });
        }
        let spacing = d_r / p_r as f64;
        let mut rows = Vec::with_capacity(p_r);
        let mut abscissae = Vec::with_capacity(p_r);
        for i in 1..=p_r {
            let s = s_k + i as f64 * spacing;
            abscissae.push(s);
            rows.push(self.road_features_at(s)?.to_array());
        }
        Ok(RoadAheadMatrix {
            rows,
            abscissae,
            d_r,
        })
    }
}
