//! Road geometry: quintic spline models of the centerline and both margins,
//! the five road features, centerline projection and road-ahead sampling.
//!
//! All curves are parameterized by the curvilinear abscissa `s` of the
//! centerline. The global frame is right-handed with `Z` opposing gravity;
//! curvature is positive for counterclockwise turning seen from `+Z`, and
//! lateral offsets are positive toward the left margin.

mod features;
mod fit;
mod io;
mod project;
mod spline;

pub use features::{RoadAheadMatrix, RoadFeatureSample, ROAD_FEATURE_COUNT, ROAD_FEATURE_NAMES};
pub use fit::{fit_track, fit_track_with_report, FitReport, DEFAULT_KNOT_SPACING};
pub use io::{read_margins_csv, write_margins_csv, TRACK_FORMAT_VERSION};
pub use project::{grid_search, newton_project, Projection};
pub use spline::{fit_curve, uniform_knots, Curve3, CurvePoint, Segment3};

use thiserror::Error;

/// Distance below which the first and last margin samples are taken to
/// close the loop.
pub const CLOSURE_TOLERANCE: f64 = 1.0;
/// Farthest a vehicle may be from the centerline for projection.
pub const MAX_PROJECTION_DISTANCE: f64 = 50.0;
pub const MIN_MARGIN_POINTS: usize = 12;

#[derive(Debug, Error)]
pub enum TrackError {
    #[error("{side} margin has {count} samples, at least {MIN_MARGIN_POINTS} required")]
    TooFewPoints { side: char, count: usize },
    #[error("{side} margin samples {index} and {next} coincide", next = index + 1)]
    DuplicatePoint { side: char, index: usize },
    #[error("knot spacing {spacing} m outside [5, L/8] for track length {length:.1} m")]
    InvalidKnotSpacing { spacing: f64, length: f64 },
    #[error("margins cross or touch near s = {s:.2} m")]
    DegenerateGeometry { s: f64 },
    #[error("spline fit residual {rms:.3} m exceeds 1 m")]
    NonConvergent { rms: f64 },
    #[error("abscissa {s} outside [0, {length}) on an open track")]
    OutOfRange { s: f64, length: f64 },
    #[error("projection did not converge in {iterations} iterations")]
    NoConvergence { iterations: usize },
    #[error("position is {distance:.2} m from the centerline")]
    TooFarFromTrack { distance: f64 },
    #[error("look-ahead to s = {end:.2} m exceeds open track length {length:.2} m")]
    HorizonExceedsTrack { end: f64, length: f64 },
    #[error("look-ahead needs d_R > 0 and p_R >= 1 (got {d_r}, {p_r})")]
    InvalidHorizon { d_r: f64, p_r: usize },
    #[error("track file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Sampled 3D road margins in the global frame, ordered along travel.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledMargins {
    pub left: Vec<[f64; 3]>,
    pub right: Vec<[f64; 3]>,
    pub closed: bool,
}

impl SampledMargins {
    /// Builds margins, detecting a closed loop when both first and last
    /// samples coincide within [`CLOSURE_TOLERANCE`].
    pub fn new(left: Vec<[f64; 3]>, right: Vec<[f64; 3]>) -> Self {
        let closes = |pts: &[[f64; 3]]| {
            pts.len() > 2
                && spline::norm(spline::sub(pts[0], pts[pts.len() - 1])) <= CLOSURE_TOLERANCE
        };
        let closed = closes(&left) && closes(&right);
        Self {
            left,
            right,
            closed,
        }
    }

    /// The same road traversed in the opposite direction: both lists are
    /// reversed and the sides swap.
    pub fn reversed(&self) -> Self {
        let mut left = self.right.clone();
        let mut right = self.left.clone();
        left.reverse();
        right.reverse();
        Self {
            left,
            right,
            closed: self.closed,
        }
    }

    pub fn validate(&self) -> Result<(), TrackError> {
        for (side, pts) in [('L', &self.left), ('R', &self.right)] {
            if pts.len() < MIN_MARGIN_POINTS {
                return Err(TrackError::TooFewPoints {
                    side,
                    count: pts.len(),
                });
            }
            for (i, w) in pts.windows(2).enumerate() {
                if spline::norm(spline::sub(w[1], w[0])) <= 1e-6 {
                    return Err(TrackError::DuplicatePoint { side, index: i });
                }
            }
        }
        Ok(())
    }
}

/// Arc-length-parameterized quintic model of centerline and margins.
///
/// The three curves share the same knots on the centerline abscissa.
/// Immutable once fitted; every query takes `&self`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackSpline {
    pub(crate) centerline: Curve3,
    pub(crate) left: Curve3,
    pub(crate) right: Curve3,
    pub(crate) length: f64,
    pub(crate) closed: bool,
}

impl TrackSpline {
    pub fn from_curves(
        centerline: Curve3,
        left: Curve3,
        right: Curve3,
    ) -> Result<Self, TrackError> {
        if centerline.knots != left.knots || centerline.knots != right.knots {
            return Err(TrackError::Format("curves do not share knots".into()));
        }
        let length = centerline.length();
        if !(length > 0.0) {
            return Err(TrackError::Format("non-positive track length".into()));
        }
        let closed = centerline.closed;
        Ok(Self {
            centerline,
            left,
            right,
            length,
            closed,
        })
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn is_closed(&self) -> bool {
        self.closed
    }

    pub fn knots(&self) -> &[f64] {
        &self.centerline.knots
    }

    pub fn centerline(&self) -> &Curve3 {
        &self.centerline
    }

    pub fn left_margin(&self) -> &Curve3 {
        &self.left
    }

    pub fn right_margin(&self) -> &Curve3 {
        &self.right
    }

    /// Wraps a closed-track abscissa into `[0, L)`; checks range on open ones.
    pub fn wrap(&self, s: f64) -> Result<f64, TrackError> {
        if self.closed {
            Ok(self.centerline.normalize(s))
        } else if (0.0..self.length).contains(&s) {
            Ok(s)
        } else {
            Err(TrackError::OutOfRange {
                s,
                length: self.length,
            })
        }
    }

    /// Largest C⁰/C¹/C² jump over all nine coordinate polynomials.
    pub fn continuity_residual(&self) -> f64 {
        self.centerline
            .continuity_residual()
            .max(self.left.continuity_residual())
            .max(self.right.continuity_residual())
    }

    /// Abscissa of the locally nearest centerline point, by damped Newton
    /// seeded at `s_hint` with a global grid fallback.
    pub fn project_to_centerline(
        &self,
        position: [f64; 3],
        s_hint: f64,
    ) -> Result<f64, TrackError> {
        project::project_with_fallback(&self.centerline, position, s_hint, MAX_PROJECTION_DISTANCE)
            .map(|p| p.s)
    }

    /// Lateral offset (positive to the left) and yaw relative to the
    /// centerline tangent, wrapped to `(−π, π]`.
    pub fn relative_pose(
        &self,
        position: [f64; 3],
        heading_yaw: f64,
        s_k: f64,
    ) -> Result<(f64, f64), TrackError> {
        let s = if self.closed {
            self.centerline.normalize(s_k)
        } else if (0.0..=self.length).contains(&s_k) {
            s_k
        } else {
            return Err(TrackError::OutOfRange {
                s: s_k,
                length: self.length,
            });
        };
        let c = self.centerline.eval(s);
        let tangent_yaw = c.d1[1].atan2(c.d1[0]);
        let th = (c.d1[0] * c.d1[0] + c.d1[1] * c.d1[1]).sqrt();
        let left_normal = [-c.d1[1] / th, c.d1[0] / th];
        let e = spline::sub(position, c.pos);
        let rel_distance = e[0] * left_normal[0] + e[1] * left_normal[1];
        Ok((rel_distance, wrap_angle(heading_yaw - tangent_yaw)))
    }
}

/// Wraps an angle to `(−π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    use std::f64::consts::PI;
    let mut r = (a + PI).rem_euclid(2.0 * PI) - PI;
    if r <= -PI {
        r += 2.0 * PI;
    }
    r
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wrap_angle_range() {
        use std::f64::consts::PI;
        assert!((wrap_angle(PI) - PI).abs() < 1e-15);
        assert!((wrap_angle(-PI) - PI).abs() < 1e-15);
        assert!((wrap_angle(3.0 * PI + 0.1) - (-PI + 0.1)).abs() < 1e-12);
        assert!((wrap_angle(0.3) - 0.3).abs() < 1e-15);
    }

    #[test]
    fn margins_detect_closure() {
        let ring = |r: f64| -> Vec<[f64; 3]> {
            (0..=40)
                .map(|i| {
                    let a = i as f64 / 40.0 * std::f64::consts::TAU;
                    [r * a.cos(), r * a.sin(), 0.0]
                })
                .collect()
        };
        let m = SampledMargins::new(ring(104.0), ring(96.0));
        assert!(m.closed);
        let open = SampledMargins::new(ring(104.0)[..30].to_vec(), ring(96.0)[..30].to_vec());
        assert!(!open.closed);
    }

    #[test]
    fn validation_errors() {
        let few: Vec<[f64; 3]> = (0..5).map(|i| [i as f64, 0.0, 0.0]).collect();
        let m = SampledMargins::new(few.clone(), few);
        assert!(matches!(
            m.validate(),
            Err(TrackError::TooFewPoints {
                side: 'L',
                count: 5
            })
        ));
        let mut dup: Vec<[f64; 3]> = (0..20).map(|i| [i as f64, 4.0, 0.0]).collect();
        dup[7] = dup[6];
        let ok: Vec<[f64; 3]> = (0..20).map(|i| [i as f64, -4.0, 0.0]).collect();
        let m = SampledMargins::new(dup, ok);
        assert!(matches!(
            m.validate(),
            Err(TrackError::DuplicatePoint {
                side: 'L',
                index: 6
            })
        ));
    }
}
