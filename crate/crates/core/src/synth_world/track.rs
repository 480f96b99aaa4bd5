use std::f64::consts::{PI, TAU};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::SynthError;
use crate::track_geometry::SampledMargins;

pub const MIN_RADIUS: f64 = 30.0;
pub const MIN_WIDTH: f64 = 6.0;
/// Largest endpoint gap of the raw plan that the generator will close.
pub const MAX_PLAN_GAP: f64 = 1.0;
const HEADING_TOLERANCE: f64 = 1e-6;
/// Integration steps per margin sample.
const SUBSTEPS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum PlanSegment {
    Straight {
        length: f64,
    },
    /// Positive `angle` turns left (counterclockwise).
    Arc {
        radius: f64,
        angle: f64,
    },
}

impl PlanSegment {
    pub fn length(&self) -> f64 {
        match *self {
            PlanSegment::Straight { length } => length,
            PlanSegment::Arc { radius, angle } => radius * angle.abs(),
        }
    }

    pub fn curvature(&self) -> f64 {
        match *self {
            PlanSegment::Straight { .. } => 0.0,
            PlanSegment::Arc { radius, angle } => angle.signum() / radius,
        }
    }

    fn heading_change(&self) -> f64 {
        match *self {
            PlanSegment::Straight { .. } => 0.0,
            PlanSegment::Arc { angle, .. } => angle,
        }
    }

    /// Exact planar displacement starting at heading `psi`.
    fn displacement(&self, psi: f64) -> [f64; 2] {
        match *self {
            PlanSegment::Straight { length } => [length * psi.cos(), length * psi.sin()],
            PlanSegment::Arc { radius, angle } => {
                let r = radius * angle.signum();
                let end = psi + angle;
                [r * (end.sin() - psi.sin()), r * (psi.cos() - end.cos())]
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackRecipe {
    /// Seeds the elevation and width phases.
    pub seed: u64,
    pub plan: Vec<PlanSegment>,
    /// Peak elevation excursion (m).
    pub elevation_amplitude: f64,
    /// Bank inside arcs (rad), outside edge raised.
    pub bank_amplitude: f64,
    pub width_base: f64,
    pub width_variation: f64,
    /// Margin sample spacing (m).
    pub sample_spacing: f64,
    /// Curvature smoothing window (m).
    pub smoothing_length: f64,
}

impl TrackRecipe {
    pub fn flat(plan: Vec<PlanSegment>, width: f64) -> Self {
        Self {
            seed: 0,
            plan,
            elevation_amplitude: 0.0,
            bank_amplitude: 0.0,
            width_base: width,
            width_variation: 0.0,
            sample_spacing: 2.0,
            smoothing_length: 12.0,
        }
    }

    pub fn plan_length(&self) -> f64 {
        self.plan.iter().map(PlanSegment::length).sum()
    }

    pub fn heading_change(&self) -> f64 {
        self.plan.iter().map(PlanSegment::heading_change).sum()
    }

    /// Distance between the raw plan's end and start points.
    pub fn plan_gap(&self) -> f64 {
        let g = plan_end(&self.plan);
        g[0].hypot(g[1])
    }

    /// Abscissa ranges `[start, end)` of every arc of the plan, with its
    /// curvature sign.
    pub fn arc_ranges(&self) -> Vec<(f64, f64, f64)> {
        let mut out = Vec::new();
        let mut s = 0.0;
        for seg in &self.plan {
            let l = seg.length();
            if let PlanSegment::Arc { angle, .. } = seg {
                out.push((s, s + l, angle.signum()));
            }
            s += l;
        }
        out
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InvalidRecipe(m));
        if self.plan.is_empty() {
            return bad("empty segment plan".into());
        }
        for seg in &self.plan {
            match *seg {
                PlanSegment::Straight { length } if !(length > 0.0 && length.is_finite()) => {
                    return bad(format!("straight length {length}"));
                }
                PlanSegment::Arc { radius, angle }
                    if !(radius >= MIN_RADIUS) || angle == 0.0 || !angle.is_finite() =>
                {
                    return bad(format!("arc radius {radius}, angle {angle}"));
                }
                _ => {}
            }
        }
        if self.width_base - self.width_variation.abs() < MIN_WIDTH {
            return bad(format!(
                "width {} ± {} drops below {MIN_WIDTH} m",
                self.width_base, self.width_variation
            ));
        }
        if !(self.sample_spacing > 0.0) || !(self.smoothing_length >= 0.0) {
            return bad("sample spacing and smoothing length must be positive".into());
        }
        if !(self.elevation_amplitude.is_finite() && self.bank_amplitude.abs() < 0.5) {
            return bad("elevation or bank amplitude out of range".into());
        }
        let turn = self.heading_change();
        let gap = self.plan_gap();
        if (turn.abs() - TAU).abs() > HEADING_TOLERANCE || gap > MAX_PLAN_GAP {
            return Err(SynthError::PlanDoesNotClose {
                gap,
                heading_change: turn,
            });
        }
        Ok(())
    }
}

fn plan_end(plan: &[PlanSegment]) -> [f64; 2] {
    let mut p = [0.0, 0.0];
    let mut psi = 0.0f64;
    for seg in plan {
        let d = seg.displacement(psi);
        p[0] += d[0];
        p[1] += d[1];
        psi += seg.heading_change();
    }
    p
}

/// Adjusts the straight lengths by the smallest change (least squares)
/// that closes the plan's position. Fails if a straight would end up
/// shorter than `min_straight`.
pub fn close_plan(plan: &[PlanSegment], min_straight: f64) -> Result<Vec<PlanSegment>, SynthError> {
    let mut psi = 0.0f64;
    let mut dirs = Vec::new();
    for (i, seg) in plan.iter().enumerate() {
        if let PlanSegment::Straight { .. } = seg {
            dirs.push((i, [psi.cos(), psi.sin()]));
        }
        psi += seg.heading_change();
    }
    let gap = plan_end(plan);
    // A L = −gap with A = [u_1 … u_m]; ΔL = Aᵀ (A Aᵀ)⁻¹ (−gap)
    let (mut a11, mut a12, mut a22) = (0.0f64, 0.0f64, 0.0f64);
    for (_, u) in &dirs {
        a11 += u[0] * u[0];
        a12 += u[0] * u[1];
        a22 += u[1] * u[1];
    }
    let fail = || SynthError::PlanDoesNotClose {
        gap: gap[0].hypot(gap[1]),
        heading_change: psi,
    };
    if dirs.is_empty() {
        return Err(fail());
    }
    // pseudo-inverse of the symmetric 2x2 A Aᵀ via its eigenbasis, so
    // parallel straights can still close a gap along their common direction
    let half_tr = 0.5 * (a11 + a22);
    let disc = (0.25 * (a11 - a22).powi(2) + a12 * a12).sqrt();
    let eig = [half_tr + disc, half_tr - disc];
    let theta = 0.5 * (2.0 * a12).atan2(a11 - a22);
    let basis = [[theta.cos(), theta.sin()], [-theta.sin(), theta.cos()]];
    let (mut lx, mut ly) = (0.0, 0.0);
    for (e, v) in eig.iter().zip(&basis) {
        if *e > 1e-9 * eig[0].max(1.0) {
            let c = -(gap[0] * v[0] + gap[1] * v[1]) / e;
            lx += c * v[0];
            ly += c * v[1];
        }
    }
    let mut out = plan.to_vec();
    for (i, u) in dirs {
        if let PlanSegment::Straight { length } = &mut out[i] {
            *length += u[0] * lx + u[1] * ly;
            if *length < min_straight {
                return Err(fail());
            }
        }
    }
    let residual = plan_end(&out);
    if residual[0].hypot(residual[1]) > 1e-6 {
        return Err(fail());
    }
    Ok(out)
}

/// A random closed plan of alternating straights and left-biased arcs,
/// `segments / 2` of each, without self-intersections.
pub fn random_plan(seed: u64, segments: usize) -> Result<Vec<PlanSegment>, SynthError> {
    let arcs = (segments / 2).max(3);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..2000 {
        let mut angles: Vec<f64> = (0..arcs).map(|_| rng.random_range(0.2..1.0)).collect();
        // at most one right-hander, compensated by the others
        if arcs >= 5 && rng.random_bool(0.5) {
            angles[rng.random_range(0..arcs)] *= -0.5;
        }
        let sum: f64 = angles.iter().sum();
        if sum <= 0.0 {
            continue;
        }
        let scale = TAU / sum;
        let mut plan = Vec::with_capacity(2 * arcs);
        for a in &angles {
            plan.push(PlanSegment::Straight {
                length: rng.random_range(40.0..160.0),
            });
            let angle = a * scale;
            if angle.abs() > 0.9 * PI {
                plan.clear();
                break;
            }
            plan.push(PlanSegment::Arc {
                radius: rng.random_range(35.0..120.0),
                angle,
            });
        }
        if plan.is_empty() {
            continue;
        }
        if let Ok(closed) = close_plan(&plan, 25.0) {
            let recipe = TrackRecipe::flat(closed.clone(), 10.0);
            if min_self_clearance(&recipe) > 25.0 {
                return Ok(closed);
            }
        }
    }
    Err(SynthError::InvalidRecipe(format!(
        "no closed {segments}-segment plan found for seed {seed}"
    )))
}

/// Smallest planar distance between centerline points at least 60 m apart
/// along the path.
pub fn min_self_clearance(recipe: &TrackRecipe) -> f64 {
    let path = integrate_plan(recipe, 5.0);
    let n = path.points.len();
    let step = path.length / n as f64;
    let skip = (60.0 / step).ceil() as usize;
    let mut best = f64::INFINITY;
    for i in 0..n {
        for j in i + skip..n {
            if n - (j - i) < skip {
                continue;
            }
            let (a, b) = (path.points[i], path.points[j]);
            best = best.min((a[0] - b[0]).hypot(a[1] - b[1]));
        }
    }
    best
}

/// Smoothed planar centerline on a uniform grid over one lap.
#[derive(Debug, Clone)]
pub struct PlanarPath {
    pub length: f64,
    /// Grid points `[x, y]`, excluding the closing duplicate.
    pub points: Vec<[f64; 2]>,
    pub heading: Vec<f64>,
    pub curvature: Vec<f64>,
    /// Smoothed arc indicator, `±1` inside left/right arcs.
    pub turn_side: Vec<f64>,
}

/// Exact averages of the plan's piecewise-constant curvature and turn side
/// over `n` cells of width `h`, so the cell headings sum to the plan's.
fn cell_averages(plan: &[PlanSegment], n: usize, h: f64) -> (Vec<f64>, Vec<f64>) {
    let mut k = vec![0.0; n];
    let mut side = vec![0.0; n];
    let mut start = 0.0;
    for seg in plan {
        let end = start + seg.length();
        let (c, t) = (seg.curvature(), turn_sign(seg.curvature()));
        let first = ((start / h).floor() as usize).min(n - 1);
        let last = ((end / h).ceil() as usize).min(n);
        for i in first..last {
            let lo = start.max(i as f64 * h);
            let hi = end.min((i + 1) as f64 * h);
            if hi > lo {
                k[i] += c * (hi - lo) / h;
                side[i] += t * (hi - lo) / h;
            }
        }
        start = end;
    }
    (k, side)
}

fn turn_sign(k: f64) -> f64 {
    if k == 0.0 {
        0.0
    } else {
        k.signum()
    }
}

/// Circular moving average over `half` samples on each side.
fn circular_smooth(v: &[f64], half: usize) -> Vec<f64> {
    let n = v.len();
    if half == 0 || n == 0 {
        return v.to_vec();
    }
    let width = 2 * half + 1;
    let mut out = vec![0.0; n];
    let mut acc: f64 = (0..width).map(|k| v[(k + n - half % n) % n]).sum();
    for i in 0..n {
        out[i] = acc / width as f64;
        acc += v[(i + half + 1) % n] - v[(i + n - half % n) % n];
    }
    out
}

/// Integrates the smoothed curvature of the plan with grid spacing close
/// to `step` and spreads the residual closure gap linearly along the lap.
pub fn integrate_plan(recipe: &TrackRecipe, step: f64) -> PlanarPath {
    let length = recipe.plan_length();
    let n = ((length / step).round() as usize).max(16);
    let h = length / n as f64;
    let (kraw, side) = cell_averages(&recipe.plan, n, h);
    let half = (0.5 * recipe.smoothing_length / h).round() as usize;
    let curvature = circular_smooth(&kraw, half);
    let turn_side = circular_smooth(&circular_smooth(&side, half), half);

    // curvature[i] is the cell value on [i h, (i+1) h)
    let mut heading = Vec::with_capacity(n);
    let mut pts = Vec::with_capacity(n + 1);
    let (mut x, mut y, mut psi) = (0.0f64, 0.0f64, 0.0f64);
    pts.push([x, y]);
    heading.push(psi);
    for k in &curvature {
        let next = psi + k * h;
        // exact for piecewise-constant curvature
        let (dx, dy) = if k.abs() < 1e-12 {
            (h * psi.cos(), h * psi.sin())
        } else {
            ((next.sin() - psi.sin()) / k, (psi.cos() - next.cos()) / k)
        };
        x += dx;
        y += dy;
        psi = next;
        pts.push([x, y]);
        heading.push(psi);
    }
    let gap = pts[n];
    pts.pop();
    heading.pop();
    for (i, p) in pts.iter_mut().enumerate() {
        let f = i as f64 / n as f64;
        p[0] -= f * gap[0];
        p[1] -= f * gap[1];
    }
    // node curvature as the average of the adjacent cells
    let node_k: Vec<f64> = (0..n)
        .map(|i| 0.5 * (curvature[i] + curvature[(i + n - 1) % n]))
        .collect();
    let node_side: Vec<f64> = (0..n)
        .map(|i| 0.5 * (turn_side[i] + turn_side[(i + n - 1) % n]))
        .collect();
    PlanarPath {
        length,
        points: pts,
        heading,
        curvature: node_k,
        turn_side: node_side,
    }
}

/// Per-sample 3D profile of a generated track.
#[derive(Debug, Clone)]
pub struct TrackProfile {
    pub s: Vec<f64>,
    pub centre: Vec<[f64; 3]>,
    pub heading: Vec<f64>,
    pub bank: Vec<f64>,
    pub width: Vec<f64>,
}

fn elevation_phases(seed: u64) -> [f64; 4] {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_e1e7);
    [
        rng.random_range(0.0..TAU),
        rng.random_range(0.0..TAU),
        rng.random_range(0.0..TAU),
        rng.random_range(0.0..TAU),
    ]
}

/// The centerline, bank and width at the margin sample abscissae.
pub fn track_profile(recipe: &TrackRecipe) -> Result<TrackProfile, SynthError> {
    recipe.validate()?;
    let length = recipe.plan_length();
    let samples = ((length / recipe.sample_spacing).round() as usize).max(16);
    let path = integrate_plan(recipe, length / (samples * SUBSTEPS) as f64);
    let ph = elevation_phases(recipe.seed);
    // harmonics 1..=3 weighted 1, 1/2, 1/3, normalized to unit peak bound
    let norm = 1.0 + 0.5 + 1.0 / 3.0;
    let mut out = TrackProfile {
        s: Vec::with_capacity(samples),
        centre: Vec::with_capacity(samples),
        heading: Vec::with_capacity(samples),
        bank: Vec::with_capacity(samples),
        width: Vec::with_capacity(samples),
    };
    for i in 0..samples {
        let g = i * SUBSTEPS;
        let s = g as f64 * length / path.points.len() as f64;
        let u = TAU * s / length;
        let z = recipe.elevation_amplitude
            * ((u + ph[0]).sin() + 0.5 * (2.0 * u + ph[1]).sin() + (3.0 * u + ph[2]).sin() / 3.0)
            / norm;
        let w = recipe.width_base + recipe.width_variation * (2.0 * u + ph[3]).sin();
        // outside of the turn raised: left turns lean right (negative)
        let bank = -recipe.bank_amplitude * path.turn_side[g];
        let p = path.points[g];
        out.s.push(s);
        out.centre.push([p[0], p[1], z]);
        out.heading.push(path.heading[g]);
        out.bank.push(bank);
        out.width.push(w);
    }
    Ok(out)
}

/// Closed margins sampled every `sample_spacing` metres; the first sample
/// is repeated at the end.
pub fn gen_track(recipe: &TrackRecipe) -> Result<SampledMargins, SynthError> {
    let prof = track_profile(recipe)?;
    let mut left = Vec::with_capacity(prof.s.len() + 1);
    let mut right = Vec::with_capacity(prof.s.len() + 1);
    for i in 0..prof.s.len() {
        let c = prof.centre[i];
        let (nx, ny) = (-prof.heading[i].sin(), prof.heading[i].cos());
        let half = 0.5 * prof.width[i];
        let (cb, sb) = (prof.bank[i].cos(), prof.bank[i].sin());
        let off = [half * cb * nx, half * cb * ny, half * sb];
        left.push([c[0] + off[0], c[1] + off[1], c[2] + off[2]]);
        right.push([c[0] - off[0], c[1] - off[1], c[2] - off[2]]);
    }
    left.push(left[0]);
    right.push(right[0]);
    let m = SampledMargins::new(left, right);
    debug_assert!(m.closed);
    Ok(m)
}
