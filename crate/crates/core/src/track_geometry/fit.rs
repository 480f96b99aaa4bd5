use super::project::{grid_search, newton_project, project_with_fallback};
use super::spline::{dot, fit_curve, norm, sub, uniform_knots, Curve3};
use super::{SampledMargins, TrackError, TrackSpline, CLOSURE_TOLERANCE};

pub const DEFAULT_KNOT_SPACING: f64 = 20.0;
const MIN_KNOT_SPACING: f64 = 5.0;
const MAX_FIT_RESIDUAL: f64 = 1.0;
/// Reparameterization passes applied to the midpoint curve.
const ARC_LENGTH_PASSES: usize = 2;

/// Diagnostics of a fit, measured against the original margin samples.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitReport {
    pub residual_rms: f64,
    pub residual_max: f64,
    pub min_width: f64,
    pub length: f64,
}

struct Polyline {
    points: Vec<[f64; 3]>,
    params: Vec<f64>,
    total: f64,
}

fn chord_parameterize(points: &[[f64; 3]], closed: bool) -> Polyline {
    let mut pts = points.to_vec();
    if closed && pts.len() > 2 && norm(sub(pts[0], pts[pts.len() - 1])) <= CLOSURE_TOLERANCE {
        pts.pop();
    }
    let mut params = Vec::with_capacity(pts.len());
    let mut acc = 0.0;
    params.push(0.0);
    for w in pts.windows(2) {
        acc += norm(sub(w[1], w[0]));
        params.push(acc);
    }
    let total = if closed {
        acc + norm(sub(pts[0], pts[pts.len() - 1]))
    } else {
        acc
    };
    Polyline {
        points: pts,
        params,
        total,
    }
}

fn segment_count(length: f64, spacing: f64, closed: bool) -> usize {
    let n = (length / spacing).round() as usize;
    n.max(if closed { 3 } else { 1 })
}

/// Projects a sequence of ordered points onto `curve`, warm-starting each
/// query from the previous result.
fn project_sequence(curve: &Curve3, points: &[[f64; 3]]) -> Vec<(f64, f64)> {
    let mut out = Vec::with_capacity(points.len());
    let mut hint = match points.first() {
        Some(&p) => grid_search(curve, p, 0.5).s,
        None => return out,
    };
    for &p in points {
        let pr = match newton_project(curve, p, hint) {
            Ok(pr) => pr,
            Err(_) => project_with_fallback(curve, p, hint, f64::INFINITY)
                .unwrap_or_else(|_| grid_search(curve, p, 0.25)),
        };
        hint = pr.s;
        out.push((pr.s, pr.distance));
    }
    out
}

fn lerp_mid(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        0.5 * (a[0] + b[0]),
        0.5 * (a[1] + b[1]),
        0.5 * (a[2] + b[2]),
    ]
}

/// Fits quintic splines to both margins, derives the arc-length centerline
/// from their midpoints and refits the margins on the centerline abscissa.
pub fn fit_track(margins: &SampledMargins, knot_spacing: f64) -> Result<TrackSpline, TrackError> {
    fit_track_with_report(margins, knot_spacing).map(|(t, _)| t)
}

pub fn fit_track_with_report(
    margins: &SampledMargins,
    knot_spacing: f64,
) -> Result<(TrackSpline, FitReport), TrackError> {
    margins.validate()?;
    let closed = margins.closed;
    let left_poly = chord_parameterize(&margins.left, closed);
    let right_poly = chord_parameterize(&margins.right, closed);
    let approx_len = 0.5 * (left_poly.total + right_poly.total);
    if !(knot_spacing >= MIN_KNOT_SPACING && knot_spacing <= approx_len / 8.0) {
        return Err(TrackError::InvalidKnotSpacing {
            spacing: knot_spacing,
            length: approx_len,
        });
    }

    let fit_margin = |poly: &Polyline| {
        let knots = uniform_knots(poly.total, segment_count(poly.total, knot_spacing, closed));
        fit_curve(&poly.params, &poly.points, &knots, closed)
    };
    let left_u = fit_margin(&left_poly)?;
    let right_u = fit_margin(&right_poly)?;

    // midpoints of matched margin points, matched by nearest point on the
    // right margin to densely sampled left-margin points
    let step = (knot_spacing / 10.0).min(1.0);
    let n_mid = (left_u.length() / step).ceil() as usize;
    let left_samples: Vec<[f64; 3]> = (0..n_mid + usize::from(!closed))
        .map(|j| left_u.position(left_u.length() * j as f64 / n_mid as f64))
        .collect();
    let matched = project_sequence(&right_u, &left_samples);
    let mids: Vec<[f64; 3]> = left_samples
        .iter()
        .zip(&matched)
        .map(|(&pl, &(ur, _))| lerp_mid(pl, right_u.position(ur)))
        .collect();
    let mid_poly = chord_parameterize_exact(&mids, closed);
    let knots0 = uniform_knots(
        mid_poly.total,
        segment_count(mid_poly.total, knot_spacing, closed),
    );
    let mut center = fit_curve(&mid_poly.params, &mid_poly.points, &knots0, closed)?;

    let mut grid_params = Vec::new();
    let mut knots = knots0;
    for _ in 0..ARC_LENGTH_PASSES {
        let est = center.arc_length();
        let count = (est / step).ceil() as usize + usize::from(!closed);
        let (pts, total) = center.resample_by_arc_length(count);
        let denom = if closed { count } else { count - 1 } as f64;
        grid_params = (0..count).map(|j| total * j as f64 / denom).collect();
        knots = uniform_knots(total, segment_count(total, knot_spacing, closed));
        center = fit_curve(&grid_params, &pts, &knots, closed)?;
    }

    let center_pts: Vec<[f64; 3]> = grid_params.iter().map(|&s| center.position(s)).collect();
    let on_left = project_sequence(&left_u, &center_pts);
    let on_right = project_sequence(&right_u, &center_pts);
    let left_pts: Vec<[f64; 3]> = on_left.iter().map(|&(u, _)| left_u.position(u)).collect();
    let right_pts: Vec<[f64; 3]> = on_right.iter().map(|&(u, _)| right_u.position(u)).collect();

    let mut min_width = f64::INFINITY;
    for (j, &s) in grid_params.iter().enumerate() {
        let c = center.eval(s);
        let th = (c.d1[0] * c.d1[0] + c.d1[1] * c.d1[1]).sqrt();
        let n = [-c.d1[1] / th, c.d1[0] / th, 0.0];
        let signed = dot(sub(left_pts[j], right_pts[j]), n);
        if !(signed > 0.0) {
            return Err(TrackError::DegenerateGeometry { s });
        }
        min_width = min_width.min(signed);
    }

    let left_s = fit_curve(&grid_params, &left_pts, &knots, closed)?;
    let right_s = fit_curve(&grid_params, &right_pts, &knots, closed)?;

    let mut sq = 0.0;
    let mut worst: f64 = 0.0;
    let mut count = 0usize;
    for (curve, poly) in [(&left_s, &left_poly), (&right_s, &right_poly)] {
        for (_, d) in project_sequence(curve, &poly.points) {
            sq += d * d;
            worst = worst.max(d);
            count += 1;
        }
    }
    let rms = (sq / count as f64).sqrt();
    if !(rms <= MAX_FIT_RESIDUAL) {
        return Err(TrackError::NonConvergent { rms });
    }
    let track = TrackSpline::from_curves(center, left_s, right_s)?;
    let report = FitReport {
        residual_rms: rms,
        residual_max: worst,
        min_width,
        length: track.length(),
    };
    Ok((track, report))
}

/// Chord parameterization without closure-duplicate removal; the midpoint
/// list never repeats its first point.
fn chord_parameterize_exact(points: &[[f64; 3]], closed: bool) -> Polyline {
    let mut params = Vec::with_capacity(points.len());
    let mut acc = 0.0;
    params.push(0.0);
    for w in points.windows(2) {
        acc += norm(sub(w[1], w[0]));
        params.push(acc);
    }
    let total = if closed {
        acc + norm(sub(points[0], points[points.len() - 1]))
    } else {
        acc
    };
    Polyline {
        points: points.to_vec(),
        params,
        total,
    }
}
