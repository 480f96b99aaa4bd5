//! Synthetic stand-in for recorded driving data: procedural closed 3D
//! tracks and a noisy driver-vehicle simulation emitting every lap channel.

mod sim;
mod track;

pub use sim::{
    simulate_laps, simulate_laps_with, AbortedLap, DriverProfile, SimulationOutput, SpeedProfile,
    VehicleParams, CONTROL_RATE, GEAR_HYSTERESIS, GEAR_UP_SPEEDS, GRAVITY, INTEGRATION_RATE,
    PEDAL_FULL_ACCEL, PEDAL_FULL_BRAKE, ROAD_EXIT_MARGIN,
};
pub use track::{
    close_plan, gen_track, integrate_plan, min_self_clearance, random_plan, track_profile,
    PlanSegment, PlanarPath, TrackProfile, TrackRecipe, MAX_PLAN_GAP, MIN_RADIUS, MIN_WIDTH,
};

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::signal_pipeline::SignalError;
use crate::track_geometry::{SampledMargins, TrackError};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error(
        "segment plan does not close: end gap {gap:.3} m, heading change {heading_change:.6} rad"
    )]
    PlanDoesNotClose { gap: f64, heading_change: f64 },
    #[error("invalid track recipe: {0}")]
    InvalidRecipe(String),
    #[error("invalid driver profile: {0}")]
    InvalidProfile(String),
    #[error("vehicle left the road at s = {s:.1} m (offset {rel_distance:.2} m)")]
    VehicleLeftRoad { s: f64, rel_distance: f64 },
    #[error("unknown scenario {0:?} (expected baseline, new_driver or reversed_track)")]
    UnknownScenario(String),
    #[error(transparent)]
    Track(#[from] TrackError),
    #[error(transparent)]
    Signal(#[from] SignalError),
}

pub const SCENARIO_NAMES: [&str; 3] = ["baseline", "new_driver", "reversed_track"];

/// The reference track: about 1.45 km with two right-handers
/// and rolling elevation.
pub fn baseline_recipe() -> TrackRecipe {
    let deg = PI / 180.0;
    let arc = |radius: f64, angle: f64| PlanSegment::Arc {
        radius,
        angle: angle * deg,
    };
    let straight = |length: f64| PlanSegment::Straight { length };
    let plan = vec![
        straight(77.0),
        arc(40.0, 100.0),
        straight(133.0),
        arc(80.0, -40.0),
        straight(96.0),
        arc(60.0, 90.0),
        straight(200.0),
        arc(120.0, 60.0),
        straight(60.0),
        arc(35.0, 110.0),
        straight(93.0),
        arc(90.0, -30.0),
        straight(252.0),
        arc(70.0, 70.0),
    ];
    let plan = close_plan(&plan, 30.0).expect("reference plan closes");
    TrackRecipe {
        seed: 7,
        plan,
        elevation_amplitude: 6.0,
        bank_amplitude: 0.05,
        width_base: 10.0,
        width_variation: 1.5,
        sample_spacing: 2.0,
        smoothing_length: 12.0,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub recipe: TrackRecipe,
    pub profile: DriverProfile,
    /// Drive the recipe's track in the opposite direction.
    pub reversed: bool,
}

impl Scenario {
    pub fn margins(&self) -> Result<SampledMargins, SynthError> {
        let m = gen_track(&self.recipe)?;
        Ok(if self.reversed { m.reversed() } else { m })
    }
}

pub fn scenario(name: &str) -> Result<Scenario, SynthError> {
    let (profile, reversed) = match name {
        "baseline" => (DriverProfile::baseline(), false),
        "new_driver" => (DriverProfile::new_driver(), false),
        "reversed_track" => (DriverProfile::baseline(), true),
        other => return Err(SynthError::UnknownScenario(other.to_string())),
    };
    Ok(Scenario {
        name: name.to_string(),
        recipe: baseline_recipe(),
        profile,
        reversed,
    })
}
