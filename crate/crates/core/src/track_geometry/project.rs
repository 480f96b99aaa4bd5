//! Closest-point queries on a [`Curve3`].

use super::spline::{dot, norm, sub, Curve3};
use super::TrackError;

pub(crate) const MAX_NEWTON_ITERATIONS: usize = 50;
/// Largest single Newton move along the curve, in parameter units.
const MAX_STEP: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub s: f64,
    pub distance: f64,
    pub iterations: usize,
}

#[inline]
fn sq_dist(curve: &Curve3, p: [f64; 3], s: f64) -> f64 {
    let e = sub(p, curve.position(s));
    dot(e, e)
}

/// Damped Newton on `½‖p − C(s)‖²` started at `hint`.
///
/// Converged when `|(p − C)·C′| < 1e-6 ‖p − C‖` or the distance drops
/// below 1e-9. On open curves an iterate pinned at an end with the gradient
/// pointing outward is accepted as the constrained minimum.
pub fn newton_project(curve: &Curve3, p: [f64; 3], hint: f64) -> Result<Projection, TrackError> {
    let len = curve.length();
    let mut s = curve.normalize(hint);
    for it in 0..MAX_NEWTON_ITERATIONS {
        let c = curve.eval(s);
        let e = sub(p, c.pos);
        let dist = norm(e);
        if dist < 1e-9 {
            return Ok(Projection {
                s,
                distance: dist,
                iterations: it,
            });
        }
        let grad = -dot(e, c.d1);
        let speed = norm(c.d1);
        if grad.abs() < 1e-6 * dist * speed.max(1e-12) {
            return Ok(Projection {
                s,
                distance: dist,
                iterations: it,
            });
        }
        if !curve.is_closed() {
            let at_start = s <= 0.0 && grad > 0.0;
            let at_end = s >= len && grad < 0.0;
            if at_start || at_end {
                return Ok(Projection {
                    s,
                    distance: dist,
                    iterations: it,
                });
            }
        }
        let hess = dot(c.d1, c.d1) - dot(e, c.d2);
        let mut step = if hess > 1e-12 {
            -grad / hess
        } else {
            -grad.signum() * speed.recip().min(1.0)
        };
        step = step.clamp(-MAX_STEP, MAX_STEP);
        let f0 = dist * dist;
        let mut accepted = false;
        for _ in 0..30 {
            let cand = if curve.is_closed() {
                curve.normalize(s + step)
            } else {
                (s + step).clamp(0.0, len)
            };
            if sq_dist(curve, p, cand) <= f0 {
                if step.abs() < 1e-10 {
                    // step below the abscissa resolution: converged
                    return Ok(Projection {
                        s: cand,
                        distance: sq_dist(curve, p, cand).sqrt(),
                        iterations: it + 1,
                    });
                }
                s = cand;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            // no descent possible at this resolution: stationary up to rounding
            return Ok(Projection {
                s,
                distance: dist,
                iterations: it,
            });
        }
    }
    Err(TrackError::NoConvergence {
        iterations: MAX_NEWTON_ITERATIONS,
    })
}

/// Scans the whole curve at `resolution` and returns the best sample.
pub fn grid_search(curve: &Curve3, p: [f64; 3], resolution: f64) -> Projection {
    let len = curve.length();
    let count = (len / resolution).ceil().max(1.0) as usize;
    let mut best = (0.0, f64::INFINITY);
    let last = if curve.is_closed() { count } else { count + 1 };
    for i in 0..last {
        let s = (len * i as f64 / count as f64).min(len);
        let d = sq_dist(curve, p, s);
        if d < best.1 {
            best = (s, d);
        }
    }
    Projection {
        s: curve.normalize(best.0),
        distance: best.1.sqrt(),
        iterations: 0,
    }
}

/// Newton from `hint`, falling back to a coarse global scan followed by
/// Newton when the local search fails or lands farther than `max_distance`.
pub fn project_with_fallback(
    curve: &Curve3,
    p: [f64; 3],
    hint: f64,
    max_distance: f64,
) -> Result<Projection, TrackError> {
    if let Ok(pr) = newton_project(curve, p, hint) {
        if pr.distance <= max_distance {
            return Ok(pr);
        }
    }
    let coarse = grid_search(curve, p, 1.0);
    let refined = newton_project(curve, p, coarse.s).unwrap_or(coarse);
    if refined.distance > max_distance {
        return Err(TrackError::TooFarFromTrack {
            distance: refined.distance,
        });
    }
    Ok(refined)
}
