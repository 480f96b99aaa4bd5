//! Piecewise quintic curves in 3D and their least-squares fit.
//!
//! Each coordinate is a degree-5 polynomial per knot interval, stored in the
//! power basis of the local offset `τ = s − knot_i`. Fitting is done in the
//! quintic Hermite basis whose unknowns are the value, first and second
//! derivative at every knot, so C² continuity holds by construction.

use crate::linalg::{gauss_legendre_8, Cholesky, SquareMatrix};

use super::TrackError;

/// Power-basis coefficients `[c0..c5]` for x, y and z of one knot interval.
pub type Segment3 = [[f64; 6]; 3];

/// Quintic Hermite basis on `t ∈ [0, 1]`, power coefficients `t^0..t^5`.
/// Order: value@0, d1@0, d2@0, value@1, d1@1, d2@1 (derivatives in `t`).
const HERMITE: [[f64; 6]; 6] = [
    [1.0, 0.0, 0.0, -10.0, 15.0, -6.0],
    [0.0, 1.0, 0.0, -6.0, 8.0, -3.0],
    [0.0, 0.0, 0.5, -1.5, 1.5, -0.5],
    [0.0, 0.0, 0.0, 10.0, -15.0, 6.0],
    [0.0, 0.0, 0.0, -4.0, 7.0, -3.0],
    [0.0, 0.0, 0.0, 0.5, -1.0, 0.5],
];

/// Weight of the third-derivative roughness penalty per interval, in
/// normalized `t` units. Keeps the normal equations definite when an interval
/// holds few samples; its null space contains every global quadratic.
const ROUGHNESS_WEIGHT: f64 = 1e-6;

/// Position and first two derivatives of a curve at one abscissa.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    pub pos: [f64; 3],
    pub d1: [f64; 3],
    pub d2: [f64; 3],
}

/// A C² piecewise-quintic 3D curve over ascending knots starting at 0.
#[derive(Debug, Clone, PartialEq)]
pub struct Curve3 {
    pub(crate) knots: Vec<f64>,
    pub(crate) segments: Vec<Segment3>,
    pub(crate) closed: bool,
}

#[inline]
fn horner(c: &[f64; 6], t: f64) -> (f64, f64, f64) {
    let v = ((((c[5] * t + c[4]) * t + c[3]) * t + c[2]) * t + c[1]) * t + c[0];
    let d1 = (((5.0 * c[5] * t + 4.0 * c[4]) * t + 3.0 * c[3]) * t + 2.0 * c[2]) * t + c[1];
    let d2 = ((20.0 * c[5] * t + 12.0 * c[4]) * t + 6.0 * c[3]) * t + 2.0 * c[2];
    (v, d1, d2)
}

impl Curve3 {
    pub fn from_parts(knots: Vec<f64>, segments: Vec<Segment3>, closed: bool) -> Self {
        debug_assert_eq!(knots.len(), segments.len() + 1);
        Self {
            knots,
            segments,
            closed,
        }
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn segments(&self) -> &[Segment3] {
        &self.segments
    }

    pub fn is_closed(&self) -> bool {
        self.closed
    }

    /// Parameter span `knots[last] − knots[0]`.
    pub fn length(&self) -> f64 {
        self.knots[self.knots.len() - 1] - self.knots[0]
    }

    /// Maps `s` into the domain: modulo the period for closed curves,
    /// clamped for open ones.
    pub fn normalize(&self, s: f64) -> f64 {
        let len = self.length();
        if self.closed {
            let r = s.rem_euclid(len);
            if r >= len {
                0.0
            } else {
                r
            }
        } else {
            s.clamp(0.0, len)
        }
    }

    #[inline]
    fn locate(&self, s: f64) -> (usize, f64) {
        let s = self.normalize(s);
        let nseg = self.segments.len();
        // knots are ascending; partition_point gives the first knot > s
        let idx = self.knots.partition_point(|&k| k <= s);
        let seg = idx.saturating_sub(1).min(nseg - 1);
        (seg, s - self.knots[seg])
    }

    /// Evaluates one interval at local offset `tau` without domain mapping.
    pub fn eval_segment(&self, seg: usize, tau: f64) -> CurvePoint {
        let c = &self.segments[seg];
        let mut p = CurvePoint {
            pos: [0.0; 3],
            d1: [0.0; 3],
            d2: [0.0; 3],
        };
        for k in 0..3 {
            let (v, d1, d2) = horner(&c[k], tau);
            p.pos[k] = v;
            p.d1[k] = d1;
            p.d2[k] = d2;
        }
        p
    }

    pub fn eval(&self, s: f64) -> CurvePoint {
        let (seg, tau) = self.locate(s);
        self.eval_segment(seg, tau)
    }

    pub fn position(&self, s: f64) -> [f64; 3] {
        self.eval(s).pos
    }

    /// Third derivative, used by roughness diagnostics.
    pub fn third_derivative(&self, s: f64) -> [f64; 3] {
        let (seg, t) = self.locate(s);
        let c = &self.segments[seg];
        let mut out = [0.0; 3];
        for k in 0..3 {
            let ck = &c[k];
            out[k] = 6.0 * ck[3] + 24.0 * ck[4] * t + 60.0 * ck[5] * t * t;
        }
        out
    }

    /// Arc length of every interval via 8-point Gauss-Legendre.
    pub fn segment_arc_lengths(&self) -> Vec<f64> {
        let gl = gauss_legendre_8();
        (0..self.segments.len())
            .map(|seg| {
                let h = self.knots[seg + 1] - self.knots[seg];
                gl.iter()
                    .map(|&(x, w)| {
                        let p = self.eval_segment(seg, x * h);
                        w * h * norm(p.d1)
                    })
                    .sum()
            })
            .collect()
    }

    pub fn arc_length(&self) -> f64 {
        self.segment_arc_lengths().iter().sum()
    }

    /// Samples the curve at points equally spaced in arc length. Returns
    /// `count` points covering `[0, L)` for closed curves and `[0, L]` for
    /// open ones, together with the total arc length.
    pub fn resample_by_arc_length(&self, count: usize) -> (Vec<[f64; 3]>, f64) {
        let seg_len = self.segment_arc_lengths();
        let total: f64 = seg_len.iter().sum();
        let mut cumulative = Vec::with_capacity(seg_len.len() + 1);
        cumulative.push(0.0);
        for l in &seg_len {
            let last = *cumulative.last().unwrap();
            cumulative.push(last + l);
        }
        let denom = if self.closed {
            count as f64
        } else {
            (count - 1) as f64
        };
        let gl = gauss_legendre_8();
        let mut out = Vec::with_capacity(count);
        let mut seg = 0usize;
        for j in 0..count {
            let target = total * j as f64 / denom;
            while seg + 1 < seg_len.len() && cumulative[seg + 1] < target {
                seg += 1;
            }
            let h = self.knots[seg + 1] - self.knots[seg];
            let want = (target - cumulative[seg]).clamp(0.0, seg_len[seg]);
            // Newton on the partial arc length within the interval
            let mut tau = if seg_len[seg] > 0.0 {
                h * want / seg_len[seg]
            } else {
                0.0
            };
            for _ in 0..20 {
                let partial: f64 = gl
                    .iter()
                    .map(|&(x, w)| w * tau * norm(self.eval_segment(seg, x * tau).d1))
                    .sum();
                let speed = norm(self.eval_segment(seg, tau).d1);
                if speed <= 0.0 {
                    break;
                }
                let step = (partial - want) / speed;
                tau = (tau - step).clamp(0.0, h);
                if step.abs() < 1e-12 {
                    break;
                }
            }
            out.push(self.eval_segment(seg, tau).pos);
        }
        (out, total)
    }

    /// Largest jump of value, first or second derivative across interior
    /// knots (and across the seam of a closed curve).
    pub fn continuity_residual(&self) -> f64 {
        let nseg = self.segments.len();
        let mut worst: f64 = 0.0;
        let pairs = if self.closed { nseg } else { nseg - 1 };
        for i in 0..pairs {
            let j = (i + 1) % nseg;
            let h = self.knots[i + 1] - self.knots[i];
            let a = self.eval_segment(i, h);
            let b = self.eval_segment(j, 0.0);
            for k in 0..3 {
                worst = worst
                    .max((a.pos[k] - b.pos[k]).abs())
                    .max((a.d1[k] - b.d1[k]).abs())
                    .max((a.d2[k] - b.d2[k]).abs());
            }
        }
        worst
    }
}

#[inline]
pub(crate) fn norm(v: [f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

#[inline]
pub(crate) fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub(crate) fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// Uniform knot vector over `[0, length]` with `nseg` intervals.
pub fn uniform_knots(length: f64, nseg: usize) -> Vec<f64> {
    let mut knots: Vec<f64> = (0..=nseg)
        .map(|i| length * i as f64 / nseg as f64)
        .collect();
    knots[nseg] = length;
    knots
}

fn hermite_values(t: f64) -> [f64; 6] {
    let mut out = [0.0; 6];
    for (k, coef) in HERMITE.iter().enumerate() {
        out[k] =
            ((((coef[5] * t + coef[4]) * t + coef[3]) * t + coef[2]) * t + coef[1]) * t + coef[0];
    }
    out
}

fn hermite_third_derivs(t: f64) -> [f64; 6] {
    let mut out = [0.0; 6];
    for (k, c) in HERMITE.iter().enumerate() {
        out[k] = 6.0 * c[3] + 24.0 * c[4] * t + 60.0 * c[5] * t * t;
    }
    out
}

/// Least-squares fit of a C² quintic curve to `points` sampled at parameters
/// `params` (ascending, within `[knots[0], knots[last]]`). For closed curves
/// the first and last knot denote the same point.
pub fn fit_curve(
    params: &[f64],
    points: &[[f64; 3]],
    knots: &[f64],
    closed: bool,
) -> Result<Curve3, TrackError> {
    assert_eq!(params.len(), points.len());
    let nseg = knots.len() - 1;
    let nknot_unknown = if closed { nseg } else { nseg + 1 };
    let dim = 3 * nknot_unknown;
    let mut ata = SquareMatrix::zeros(dim);
    let mut atb = vec![vec![0.0; dim]; 3];

    let unknown_index = |seg: usize| -> [usize; 6] {
        let a = seg;
        let b = if closed { (seg + 1) % nseg } else { seg + 1 };
        [3 * a, 3 * a + 1, 3 * a + 2, 3 * b, 3 * b + 1, 3 * b + 2]
    };

    let span = knots[nseg] - knots[0];
    for (&u, p) in params.iter().zip(points) {
        let u = if closed {
            (u - knots[0]).rem_euclid(span) + knots[0]
        } else {
            u.clamp(knots[0], knots[nseg])
        };
        let idx = knots.partition_point(|&k| k <= u);
        let seg = idx.saturating_sub(1).min(nseg - 1);
        let h = knots[seg + 1] - knots[seg];
        let t = ((u - knots[seg]) / h).clamp(0.0, 1.0);
        let basis = hermite_values(t);
        let ids = unknown_index(seg);
        for a in 0..6 {
            for b in 0..6 {
                ata.add(ids[a], ids[b], basis[a] * basis[b]);
            }
            for k in 0..3 {
                atb[k][ids[a]] += basis[a] * p[k];
            }
        }
    }

    // roughness penalty ∫ (p''')² dt per interval, exact with 8-point GL
    let gl = gauss_legendre_8();
    let mut gram = [[0.0; 6]; 6];
    for &(x, w) in &gl {
        let d3 = hermite_third_derivs(x);
        for a in 0..6 {
            for b in 0..6 {
                gram[a][b] += w * d3[a] * d3[b];
            }
        }
    }
    for seg in 0..nseg {
        let ids = unknown_index(seg);
        for a in 0..6 {
            for b in 0..6 {
                ata.add(ids[a], ids[b], ROUGHNESS_WEIGHT * gram[a][b]);
            }
        }
    }

    let chol = Cholesky::new(&ata).ok_or(TrackError::NonConvergent { rms: f64::INFINITY })?;
    let sol: Vec<Vec<f64>> = atb.iter().map(|b| chol.solve(b)).collect();

    let mut segments = Vec::with_capacity(nseg);
    for seg in 0..nseg {
        let h = knots[seg + 1] - knots[seg];
        let ids = unknown_index(seg);
        let mut s3: Segment3 = [[0.0; 6]; 3];
        for k in 0..3 {
            let mut t_coef = [0.0; 6];
            for a in 0..6 {
                let u = sol[k][ids[a]];
                for p in 0..6 {
                    t_coef[p] += u * HERMITE[a][p];
                }
            }
            let mut hp = 1.0;
            for p in 0..6 {
                s3[k][p] = t_coef[p] / hp;
                hp *= h;
            }
        }
        segments.push(s3);
    }
    Ok(Curve3::from_parts(knots.to_vec(), segments, closed))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hermite_basis_interpolates_endpoint_data() {
        // value/derivative conditions at t = 0 and t = 1
        for (k, c) in HERMITE.iter().enumerate() {
            let v0 = c[0];
            let d0 = c[1];
            let dd0 = 2.0 * c[2];
            let v1: f64 = c.iter().sum();
            let d1: f64 = (1..6).map(|p| p as f64 * c[p]).sum();
            let dd1: f64 = (2..6).map(|p| (p * (p - 1)) as f64 * c[p]).sum();
            let got = [v0, d0, dd0, v1, d1, dd1];
            for (j, g) in got.iter().enumerate() {
                let want = if j == k { 1.0 } else { 0.0 };
                assert!((g - want).abs() < 1e-12, "basis {k} condition {j}: {g}");
            }
        }
    }

    #[test]
    fn fits_quadratic_exactly() {
        let params: Vec<f64> = (0..101).map(|i| i as f64).collect();
        let pts: Vec<[f64; 3]> = params
            .iter()
            .map(|&u| [u, 0.01 * u * u - 3.0, 2.0 - 0.5 * u])
            .collect();
        let knots = uniform_knots(100.0, 5);
        let c = fit_curve(&params, &pts, &knots, false).unwrap();
        for (u, p) in params.iter().zip(&pts) {
            let q = c.position(*u);
            for k in 0..3 {
                assert!((q[k] - p[k]).abs() < 1e-8);
            }
        }
        assert!(c.continuity_residual() < 1e-9);
    }

    #[test]
    fn closed_fit_is_periodic() {
        let n = 400;
        let r = 50.0;
        let len = 2.0 * std::f64::consts::PI * r;
        let params: Vec<f64> = (0..n).map(|i| len * i as f64 / n as f64).collect();
        let pts: Vec<[f64; 3]> = params
            .iter()
            .map(|&u| [r * (u / r).cos(), r * (u / r).sin(), 0.0])
            .collect();
        let knots = uniform_knots(len, 16);
        let c = fit_curve(&params, &pts, &knots, true).unwrap();
        assert!(c.continuity_residual() < 1e-8);
        assert!((c.arc_length() - len).abs() / len < 1e-5);
    }
}
