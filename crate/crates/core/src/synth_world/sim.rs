use std::collections::VecDeque;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::SynthError;
use crate::signal_pipeline::{LapRecording, CHANNEL_COUNT};
use crate::track_geometry::TrackSpline;

pub const GRAVITY: f64 = 9.81;
/// Vehicle integration rate (Hz).
pub const INTEGRATION_RATE: f64 = 1000.0;
/// Driver update rate (Hz).
pub const CONTROL_RATE: f64 = 100.0;
/// Allowed excursion beyond the road edge before a lap is aborted (m).
pub const ROAD_EXIT_MARGIN: f64 = 2.0;
/// Upshift speeds (m/s); downshifts happen 1 m/s lower.
pub const GEAR_UP_SPEEDS: [f64; 5] = [7.0, 12.0, 17.0, 23.0, 30.0];
pub const GEAR_HYSTERESIS: f64 = 1.0;
/// Speed-profile grid spacing (m).
const PROFILE_STEP: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriverProfile {
    /// Fixed part of the pure-pursuit look-ahead (m).
    pub preview_distance: f64,
    /// Speed-proportional part of the look-ahead (s).
    pub preview_time: f64,
    /// Multiplies the pure-pursuit steering angle.
    pub lateral_gain: f64,
    /// Lateral acceleration the target speed is planned for (m/s²).
    pub lateral_accel_limit: f64,
    /// Relative target-speed reduction per unit road slope.
    pub slope_gain: f64,
    pub max_speed: f64,
    /// Longitudinal limits (m/s²).
    pub accel_limit: f64,
    pub brake_limit: f64,
    /// Speed-tracking gain (1/s).
    pub speed_gain: f64,
    /// Time ahead at which the target speed is read (s).
    pub speed_lookahead: f64,
    /// Stationary standard deviations of the Ornstein-Uhlenbeck noises.
    pub steer_noise: f64,
    pub throttle_noise: f64,
    /// Wander of the followed line around the centerline (m).
    pub line_noise: f64,
    pub noise_time: f64,
    pub reaction_delay: f64,
    pub seed: u64,
}

impl DriverProfile {
    pub fn baseline() -> Self {
        Self {
            preview_distance: 6.0,
            preview_time: 0.6,
            lateral_gain: 1.0,
            lateral_accel_limit: 6.0,
            slope_gain: 0.5,
            max_speed: 32.0,
            accel_limit: 3.5,
            brake_limit: 7.0,
            speed_gain: 0.8,
            speed_lookahead: 0.8,
            steer_noise: 0.004,
            throttle_noise: 0.5,
            line_noise: 0.5,
            noise_time: 1.5,
            reaction_delay: 0.15,
            seed: 0,
        }
    }

    /// A more aggressive, slower-reacting and noisier driver.
    pub fn new_driver() -> Self {
        Self {
            preview_distance: 5.0,
            preview_time: 0.7,
            lateral_gain: 1.0,
            lateral_accel_limit: 7.5,
            slope_gain: 0.2,
            max_speed: 36.0,
            accel_limit: 5.0,
            brake_limit: 9.0,
            speed_gain: 1.2,
            speed_lookahead: 0.6,
            steer_noise: 0.007,
            throttle_noise: 0.9,
            line_noise: 0.8,
            noise_time: 1.0,
            reaction_delay: 0.2,
            seed: 0,
        }
    }

    pub fn without_noise(mut self) -> Self {
        self.steer_noise = 0.0;
        self.throttle_noise = 0.0;
        self.line_noise = 0.0;
        self
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let positive = [
            self.preview_distance,
            self.lateral_gain,
            self.lateral_accel_limit,
            self.max_speed,
            self.accel_limit,
            self.brake_limit,
            self.speed_gain,
            self.noise_time,
        ];
        let nonneg = [
            self.preview_time,
            self.slope_gain,
            self.speed_lookahead,
            self.steer_noise,
            self.throttle_noise,
            self.line_noise,
            self.reaction_delay,
        ];
        if positive.iter().all(|v| *v > 0.0 && v.is_finite())
            && nonneg.iter().all(|v| *v >= 0.0 && v.is_finite())
        {
            Ok(())
        } else {
            Err(SynthError::InvalidProfile(format!("{self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleParams {
    pub wheelbase: f64,
    /// CG to rear axle distance (m).
    pub rear_length: f64,
    /// Steering actuator time constant (s).
    pub steer_time: f64,
    /// Drive/brake response time constant (s).
    pub accel_time: f64,
    /// Road-wheel angle limit (rad).
    pub max_steer: f64,
    /// Steering-wheel to road-wheel ratio.
    pub steering_ratio: f64,
}

impl Default for VehicleParams {
    fn default() -> Self {
        Self {
            wheelbase: 2.6,
            rear_length: 1.4,
            steer_time: 0.08,
            accel_time: 0.15,
            max_steer: 0.6,
            steering_ratio: 15.0,
        }
    }
}

/// A lap dropped because the vehicle left the road.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AbortedLap {
    pub attempt: usize,
    pub s: f64,
    pub rel_distance: f64,
}

#[derive(Debug, Clone)]
pub struct SimulationOutput {
    pub laps: Vec<LapRecording>,
    pub aborted: Vec<AbortedLap>,
}

/// Target speed against abscissa from the curvature and slope limits,
/// made feasible by backward (braking) and forward (traction) passes.
#[derive(Debug, Clone)]
pub struct SpeedProfile {
    step: f64,
    speeds: Vec<f64>,
    closed: bool,
}

impl SpeedProfile {
    pub fn new(track: &TrackSpline, p: &DriverProfile) -> Self {
        let n = (track.length() / PROFILE_STEP).ceil().max(2.0) as usize;
        let step = track.length() / n as f64;
        let count = if track.is_closed() { n } else { n + 1 };
        let mut v: Vec<f64> = (0..count)
            .map(|i| {
                let s = (i as f64 * step).min(track.length());
                let f = track
                    .road_features_at(if track.is_closed() {
                        s
                    } else {
                        s.min(track.length() - 1e-9)
                    })
                    .expect("abscissa on track");
                let corner = (p.lateral_accel_limit / f.curvature_xy.abs().max(1e-6)).sqrt();
                corner.min(p.max_speed) * (1.0 - p.slope_gain * f.pitch_slope.abs()).max(0.3)
            })
            .collect();
        let brake = 0.6 * p.brake_limit;
        let accel = 0.6 * p.accel_limit;
        let passes = if track.is_closed() { 3 } else { 1 };
        for _ in 0..passes {
            for i in (0..count).rev() {
                let next = if i + 1 < count {
                    v[i + 1]
                } else if track.is_closed() {
                    v[0]
                } else {
                    continue;
                };
                v[i] = v[i].min((next * next + 2.0 * brake * step).sqrt());
            }
            for i in 0..count {
                let prev = if i > 0 {
                    v[i - 1]
                } else if track.is_closed() {
                    v[count - 1]
                } else {
                    continue;
                };
                v[i] = v[i].min((prev * prev + 2.0 * accel * step).sqrt());
            }
        }
        Self {
            step,
            speeds: v,
            closed: track.is_closed(),
        }
    }

    pub fn at(&self, s: f64) -> f64 {
        let n = self.speeds.len();
        let x = s / self.step;
        if self.closed {
            let x = x.rem_euclid(n as f64);
            let i = x.floor() as usize % n;
            let f = x - x.floor();
            self.speeds[i] * (1.0 - f) + self.speeds[(i + 1) % n] * f
        } else {
            let x = x.clamp(0.0, (n - 1) as f64);
            let i = (x.floor() as usize).min(n - 2);
            let f = x - i as f64;
            self.speeds[i] * (1.0 - f) + self.speeds[i + 1] * f
        }
    }
}

/// Ornstein-Uhlenbeck process sampled exactly at a fixed step.
#[derive(Debug, Clone, Copy)]
struct OrnsteinUhlenbeck {
    value: f64,
    decay: f64,
    kick: f64,
}

impl OrnsteinUhlenbeck {
    fn new(sigma: f64, tau: f64, dt: f64) -> Self {
        let decay = (-dt / tau).exp();
        Self {
            value: 0.0,
            decay,
            kick: sigma * (1.0 - decay * decay).sqrt(),
        }
    }

    fn step(&mut self, rng: &mut ChaCha8Rng) -> f64 {
        let z: f64 = StandardNormal.sample(rng);
        self.value = self.decay * self.value + self.kick * z;
        self.value
    }
}

/// Frenet state: abscissa, left offset, unwrapped yaw, speed, road-wheel
/// angle and applied tractive acceleration.
#[derive(Debug, Clone, Copy, PartialEq)]
struct State {
    s: f64,
    d: f64,
    psi: f64,
    v: f64,
    delta: f64,
    accel: f64,
}

impl State {
    fn axpy(&self, k: &State, h: f64) -> State {
        State {
            s: self.s + h * k.s,
            d: self.d + h * k.d,
            psi: self.psi + h * k.psi,
            v: self.v + h * k.v,
            delta: self.delta + h * k.delta,
            accel: self.accel + h * k.accel,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Road {
    tangent_yaw: f64,
    planar_speed: f64,
    curvature: f64,
    /// dz/ds of the centerline.
    slope: f64,
    z2: f64,
}

struct World<'a> {
    track: &'a TrackSpline,
    vehicle: VehicleParams,
}

impl World<'_> {
    fn road(&self, s: f64) -> Road {
        let c = self.track.centerline().eval(self.wrap(s));
        let planar = c.d1[0].hypot(c.d1[1]);
        Road {
            tangent_yaw: c.d1[1].atan2(c.d1[0]),
            planar_speed: planar,
            curvature: (c.d1[0] * c.d2[1] - c.d1[1] * c.d2[0]) / planar.powi(3),
            slope: c.d1[2],
            z2: c.d2[2],
        }
    }

    fn wrap(&self, s: f64) -> f64 {
        if self.track.is_closed() {
            s.rem_euclid(self.track.length())
        } else {
            s.clamp(0.0, self.track.length())
        }
    }

    fn slip(&self, delta: f64) -> f64 {
        (self.vehicle.rear_length / self.vehicle.wheelbase * delta.tan()).atan()
    }

    /// Road grade along the vehicle heading.
    fn grade(&self, road: &Road, psi: f64) -> f64 {
        (road.slope / road.planar_speed * (psi - road.tangent_yaw).cos()).atan()
    }

    fn rhs(&self, x: &State, cmd: (f64, f64)) -> State {
        let road = self.road(x.s);
        let beta = self.slip(x.delta);
        let v = x.v.max(0.0);
        let chi = x.psi + beta - road.tangent_yaw;
        let vp = &self.vehicle;
        State {
            s: v * chi.cos() / ((1.0 - road.curvature * x.d) * road.planar_speed),
            d: v * chi.sin(),
            psi: v * beta.cos() * x.delta.tan() / vp.wheelbase,
            v: x.accel - GRAVITY * self.grade(&road, x.psi).sin(),
            delta: (cmd.0 - x.delta) / vp.steer_time,
            accel: (cmd.1 - x.accel) / vp.accel_time,
        }
    }

    fn rk4(&self, x: &State, cmd: (f64, f64), h: f64) -> State {
        let k1 = self.rhs(x, cmd);
        let k2 = self.rhs(&x.axpy(&k1, 0.5 * h), cmd);
        let k3 = self.rhs(&x.axpy(&k2, 0.5 * h), cmd);
        let k4 = self.rhs(&x.axpy(&k3, h), cmd);
        let mut out = *x;
        for (o, (a, (b, (c, d)))) in [
            (&mut out.s, (k1.s, (k2.s, (k3.s, k4.s)))),
            (&mut out.d, (k1.d, (k2.d, (k3.d, k4.d)))),
            (&mut out.psi, (k1.psi, (k2.psi, (k3.psi, k4.psi)))),
            (&mut out.v, (k1.v, (k2.v, (k3.v, k4.v)))),
            (&mut out.delta, (k1.delta, (k2.delta, (k3.delta, k4.delta)))),
            (&mut out.accel, (k1.accel, (k2.accel, (k3.accel, k4.accel)))),
        ] {
            *o += h / 6.0 * (a + 2.0 * b + 2.0 * c + d);
        }
        out
    }

    fn position(&self, x: &State) -> [f64; 3] {
        let s = self.wrap(x.s);
        let c = self.track.centerline().eval(s);
        let planar = c.d1[0].hypot(c.d1[1]);
        let n = [-c.d1[1] / planar, c.d1[0] / planar];
        let bank = self.track.road_features_at(s).map_or(0.0, |f| f.bank_angle);
        [
            c.pos[0] + x.d * n[0],
            c.pos[1] + x.d * n[1],
            c.pos[2] + x.d * bank.tan(),
        ]
    }

    fn bank_and_rate(&self, s: f64) -> (f64, f64) {
        let f = |s: f64| {
            self.track
                .road_features_at(self.wrap(s))
                .map_or(0.0, |f| f.bank_angle)
        };
        let h = 0.5;
        let (lo, hi) = if self.track.is_closed() {
            (s - h, s + h)
        } else {
            ((s - h).max(0.0), (s + h).min(self.track.length() - 1e-9))
        };
        (f(s), (f(hi) - f(lo)) / (hi - lo))
    }

    /// The 16 features plus pose at state `x` under command `cmd`.
    fn channels(
        &self,
        x: &State,
        cmd: (f64, f64),
        gear: f64,
    ) -> Result<[f64; CHANNEL_COUNT], SynthError> {
        let vp = &self.vehicle;
        let dx = self.rhs(x, cmd);
        let road = self.road(x.s);
        let beta = self.slip(x.delta);
        let k = vp.rear_length / vp.wheelbase;
        let t = x.delta.tan();
        let beta_rate = k * (1.0 + t * t) / (1.0 + k * k * t * t) * dx.delta;
        let (v, yaw_rate) = (x.v, dx.psi);
        let (vx, vy) = (v * beta.cos(), v * beta.sin());
        let ax_h = dx.v * beta.cos() - v * beta.sin() * beta_rate - yaw_rate * vy;
        let ay_h = dx.v * beta.sin() + v * beta.cos() * beta_rate + yaw_rate * vx;

        let (bank, bank_slope) = self.bank_and_rate(x.s);
        let s_rate = dx.s;
        let vz = road.slope * s_rate + dx.d * bank.tan();
        let z_acc = road.z2 * s_rate * s_rate + road.slope * dx.v;
        let grade = self.grade(&road, x.psi);
        let grade_rate = road.z2 / road.planar_speed * s_rate / (1.0 + grade.tan().powi(2));
        let bank_rate = bank_slope * s_rate;

        // specific force: heading frame, then pitch (nose up), then roll
        let (fx, fy, fz) = (ax_h, ay_h, z_acc + GRAVITY);
        let (cp, sp) = (grade.cos(), grade.sin());
        let (fx1, fz1) = (cp * fx + sp * fz, -sp * fx + cp * fz);
        let (cr, sr) = (bank.cos(), bank.sin());
        let a_x = fx1;
        let a_y = cr * fy + sr * fz1;
        let a_z = -sr * fy + cr * fz1;
        // body rates from Euler rates; pitch angle about +y is −grade
        let roll_rate = bank_rate + yaw_rate * sp;
        let pitch_rate = -grade_rate * cr + yaw_rate * cp * sr;
        let body_yaw_rate = grade_rate * sr + yaw_rate * cp * cr;

        let pos = self.position(x);
        let (rel_distance, rel_yaw) = self.track.relative_pose(pos, x.psi, self.wrap(x.s))?;
        let throttle = (x.accel / PEDAL_FULL_ACCEL).clamp(0.0, 1.0);
        let brake = (-x.accel / PEDAL_FULL_BRAKE).clamp(0.0, 1.0);
        Ok([
            a_x,
            a_y,
            a_z,
            roll_rate,
            body_yaw_rate,
            pitch_rate,
            rel_distance,
            rel_yaw,
            vx,
            vy,
            vz,
            throttle,
            brake,
            vp.steering_ratio * x.delta,
            vp.steering_ratio * dx.delta,
            gear,
            pos[0],
            pos[1],
            pos[2],
            x.psi,
        ])
    }
}

/// Tractive acceleration at full throttle and deceleration at full brake
/// (m/s²); pedal channels are the applied values over these.
pub const PEDAL_FULL_ACCEL: f64 = 6.0;
pub const PEDAL_FULL_BRAKE: f64 = 10.0;

fn next_gear(gear: usize, v: f64) -> usize {
    let mut g = gear.clamp(1, 6);
    while g < 6 && v > GEAR_UP_SPEEDS[g - 1] {
        g += 1;
    }
    while g > 1 && v < GEAR_UP_SPEEDS[g - 2] - GEAR_HYSTERESIS {
        g -= 1;
    }
    g
}

fn gear_for(v: f64) -> usize {
    1 + GEAR_UP_SPEEDS.iter().filter(|&&u| v > u).count()
}

/// Lap seed derived from the driver seed and the attempt index.
fn lap_rng(seed: u64, attempt: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (attempt as u64 + 1))
}

struct Driver<'a> {
    profile: &'a DriverProfile,
    speeds: SpeedProfile,
    steer: OrnsteinUhlenbeck,
    throttle: OrnsteinUhlenbeck,
    line: OrnsteinUhlenbeck,
    queue: VecDeque<(f64, f64)>,
    delay_ticks: usize,
}

impl<'a> Driver<'a> {
    fn new(track: &TrackSpline, profile: &'a DriverProfile) -> Self {
        let dt = 1.0 / CONTROL_RATE;
        Self {
            profile,
            speeds: SpeedProfile::new(track, profile),
            steer: OrnsteinUhlenbeck::new(profile.steer_noise, profile.noise_time, dt),
            throttle: OrnsteinUhlenbeck::new(profile.throttle_noise, profile.noise_time, dt),
            line: OrnsteinUhlenbeck::new(profile.line_noise, profile.noise_time, dt),
            queue: VecDeque::new(),
            delay_ticks: (profile.reaction_delay * CONTROL_RATE).round() as usize,
        }
    }

    fn decide(&mut self, w: &World, x: &State, rng: &mut ChaCha8Rng) -> (f64, f64) {
        let p = self.profile;
        let (n_steer, n_throttle, n_line) = (
            self.steer.step(rng),
            self.throttle.step(rng),
            self.line.step(rng),
        );
        let look = p.preview_distance + p.preview_time * x.v.max(0.0);
        let target = w.position(&State {
            s: x.s + look,
            d: n_line,
            ..*x
        });
        let here = w.position(x);
        let (ex, ey) = (target[0] - here[0], target[1] - here[1]);
        let alpha = ey.atan2(ex) - x.psi;
        let dist = ex.hypot(ey).max(1e-3);
        let pursuit = (2.0 * w.vehicle.wheelbase * alpha.sin() / dist).atan();
        let max = w.vehicle.max_steer;
        let steer = (p.lateral_gain * pursuit + n_steer).clamp(-max, max);

        let v_target = self
            .speeds
            .at(w.wrap(x.s + p.speed_lookahead * x.v.max(0.0)));
        let road = w.road(x.s);
        let hold = GRAVITY * w.grade(&road, x.psi).sin();
        let accel = (p.speed_gain * (v_target - x.v) + hold + n_throttle)
            .clamp(-p.brake_limit, p.accel_limit);

        self.queue.push_back((steer, accel));
        if self.queue.len() > self.delay_ticks {
            self.queue.pop_front().expect("non-empty")
        } else {
            *self.queue.front().expect("non-empty")
        }
    }
}

/// Drives `n_laps` recorded laps. Closed tracks are driven continuously,
/// starting 100 m before the line; open tracks restart at `s = 0` for every
/// lap and end once the look-ahead reaches the far end.
pub fn simulate_laps(
    track: &TrackSpline,
    profile: &DriverProfile,
    n_laps: usize,
    fs: f64,
) -> Result<SimulationOutput, SynthError> {
    simulate_laps_with(track, profile, &VehicleParams::default(), n_laps, fs)
}

pub fn simulate_laps_with(
    track: &TrackSpline,
    profile: &DriverProfile,
    vehicle: &VehicleParams,
    n_laps: usize,
    fs: f64,
) -> Result<SimulationOutput, SynthError> {
    profile.validate()?;
    let per_sample = (INTEGRATION_RATE / fs).round() as usize;
    let per_control = (INTEGRATION_RATE / CONTROL_RATE).round() as usize;
    if per_sample == 0 || (INTEGRATION_RATE / per_sample as f64 - fs).abs() > 1e-9 {
        return Err(SynthError::InvalidProfile(format!(
            "sample rate {fs} Hz must divide {INTEGRATION_RATE} Hz"
        )));
    }
    let world = World {
        track,
        vehicle: *vehicle,
    };
    let h = 1.0 / INTEGRATION_RATE;
    let length = track.length();
    let closed = track.is_closed();
    let end_s = if closed {
        length
    } else {
        length - profile.preview_distance - profile.preview_time * profile.max_speed - 5.0
    };
    if !closed && end_s <= 10.0 {
        return Err(SynthError::InvalidProfile(
            "open track shorter than the look-ahead".into(),
        ));
    }

    let mut driver = Driver::new(track, profile);
    let start_state = |s: f64, v: f64| -> State {
        let road = world.road(s);
        State {
            s,
            d: 0.0,
            psi: road.tangent_yaw,
            v,
            delta: (road.curvature * vehicle.wheelbase).atan(),
            accel: 0.0,
        }
    };
    let mut x = if closed {
        let s0 = length - 100.0f64.min(0.25 * length);
        start_state(s0, driver.speeds.at(s0))
    } else {
        start_state(0.0, driver.speeds.at(0.0))
    };
    let mut out = SimulationOutput {
        laps: Vec::new(),
        aborted: Vec::new(),
    };
    let max_attempts = 2 * n_laps + 2;
    let mut attempt = 0;
    let mut rng = lap_rng(profile.seed, attempt);
    let mut cmd = (x.delta, 0.0);
    let mut gear = gear_for(x.v);
    let mut rows: Vec<[f64; CHANNEL_COUNT]> = Vec::new();
    let mut recording = !closed;
    let mut tick: u64 = 0;
    let mut last_abort = None;

    while out.laps.len() < n_laps {
        if attempt >= max_attempts {
            let a: AbortedLap = last_abort.expect("attempts only end through aborts");
            return Err(SynthError::VehicleLeftRoad {
                s: a.s,
                rel_distance: a.rel_distance,
            });
        }
        if tick % per_control as u64 == 0 {
            cmd = driver.decide(&world, &x, &mut rng);
        }
        if tick % per_sample as u64 == 0 {
            gear = next_gear(gear, x.v);
            let row = world.channels(&x, cmd, gear as f64)?;
            let width = track.road_features_at(world.wrap(x.s))?.width;
            if row[6].abs() > 0.5 * width + ROAD_EXIT_MARGIN {
                let a = AbortedLap {
                    attempt,
                    s: world.wrap(x.s),
                    rel_distance: row[6],
                };
                out.aborted.push(a);
                last_abort = Some(a);
                rows.clear();
                attempt += 1;
                rng = lap_rng(profile.seed, attempt);
                driver.queue.clear();
                let v = x.v.min(driver.speeds.at(world.wrap(x.s)));
                x = if closed {
                    recording = false;
                    start_state(x.s, v)
                } else {
                    start_state(0.0, driver.speeds.at(0.0))
                };
                cmd = (x.delta, 0.0);
                tick = 0;
                continue;
            }
            if recording {
                rows.push(row);
            }
        }
        x = world.rk4(&x, cmd, h);
        tick += 1;
        if x.s >= end_s {
            if recording && !rows.is_empty() {
                let id = format!("lap_{:03}", out.laps.len() + 1);
                out.laps.push(to_recording(id, fs, &rows)?);
                attempt += 1;
                rng = lap_rng(profile.seed, attempt);
            }
            rows.clear();
            recording = true;
            if closed {
                x.s -= length;
            } else {
                driver.queue.clear();
                x = start_state(0.0, driver.speeds.at(0.0));
                cmd = (x.delta, 0.0);
                tick = 0;
            }
        }
    }
    Ok(out)
}

fn to_recording(
    id: String,
    fs: f64,
    rows: &[[f64; CHANNEL_COUNT]],
) -> Result<LapRecording, SynthError> {
    let channels: Vec<Vec<f64>> = (0..CHANNEL_COUNT)
        .map(|c| rows.iter().map(|r| r[c]).collect())
        .collect();
    Ok(LapRecording::new(id, fs, channels)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gear_map_hysteresis() {
        assert_eq!(gear_for(5.0), 1);
        assert_eq!(gear_for(12.5), 3);
        assert_eq!(next_gear(3, 11.5), 3);
        assert_eq!(next_gear(3, 10.9), 2);
        assert_eq!(next_gear(2, 12.5), 3);
        assert_eq!(next_gear(1, 40.0), 6);
    }

    #[test]
    fn ou_stationary_std() {
        let mut ou = OrnsteinUhlenbeck::new(0.5, 1.0, 0.01);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 400_000;
        let mut acc = 0.0;
        for _ in 0..n {
            let v = ou.step(&mut rng);
            acc += v * v;
        }
        let sd = (acc / n as f64).sqrt();
        assert!((sd - 0.5).abs() < 0.03, "{sd}");
    }
}
