//! Deterministic driving world with exact ground truth.
//!
//! The vehicle moves on circular arcs whose radius is the exact inverse of the
//! steering estimator (`r = l_wb / sin δ`, `δ = steering / ratio`), so labels
//! computed from ground-truth poses reproduce the commanded steering and any
//! label error on estimated poses comes from odometry alone.

pub mod lidar;
pub mod world;

use std::f64::consts::FRAC_PI_2;

use nalgebra::{Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use lidar::{lidar_scan, LidarConfig};
pub use world::{generate_world, Obstacle, World};

use crate::geometry::Pose;
use crate::odometry::PointCloud;
use crate::steering::VehicleParams;

/// Obstacles closer than this to the vehicle reference point count as a collision.
pub const VEHICLE_CLEARANCE_M: f64 = 1.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("invalid simulator config: {0}")]
    InvalidConfig(String),
    #[error("frame {frame}: steering {steering_rad} rad gives a wheel angle outside (-π/2, π/2)")]
    InvalidSteering { frame: usize, steering_rad: f64 },
    #[error("steering profile has {profile} entries but the scenario has {frames} frames")]
    ProfileLengthMismatch { profile: usize, frames: usize },
    #[error("frame {frame}: vehicle is {distance_m:.3} m from an obstacle (minimum {VEHICLE_CLEARANCE_M} m)")]
    Collision { frame: usize, distance_m: f64 },
    #[error("frame {frame}: obstacle density {density:.4}/m² within LiDAR range is below the minimum {minimum}/m²")]
    SparseWorld { frame: usize, density: f64, minimum: f64 },
}

/// How the commanded wheel angle maps to a path radius.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KinematicModel {
    /// `r = l_wb / sin δ`: exact inverse of the label estimator.
    #[default]
    Sine,
    /// `r = l_wb / tan δ`: the usual rear-axle bicycle model, for robustness runs.
    Tangent,
}

/// Signed radius of the path driven with `steering_rad` at the wheel; `±∞` when straight.
pub fn path_radius(steering_rad: f64, params: &VehicleParams, model: KinematicModel) -> Option<f64> {
    let delta = steering_rad / params.steering_ratio;
    if !(delta.abs() < FRAC_PI_2) {
        return None;
    }
    if delta == 0.0 {
        return Some(f64::INFINITY);
    }
    Some(match model {
        KinematicModel::Sine => params.wheelbase_m / delta.sin(),
        KinematicModel::Tangent => params.wheelbase_m / delta.tan(),
    })
}

/// Body-frame motion for arc length `ds` on the circle of signed radius `r`.
pub fn arc_increment(radius_m: f64, ds: f64) -> Pose {
    if radius_m.is_infinite() {
        return Pose::from_yaw(0.0, Vector3::new(0.0, ds, 0.0));
    }
    let theta = ds / radius_m;
    let half = (theta / 2.0).sin();
    let x = 2.0 * radius_m * half * half;
    let y = radius_m * theta.sin();
    Pose::from_yaw(-theta, Vector3::new(x, y, 0.0))
}

/// Advances `pose` by arc length `ds` with the steering wheel at `steering_rad`.
///
/// Returns `None` when the implied wheel angle is not strictly inside `±π/2`.
pub fn step_arc(pose: &Pose, steering_rad: f64, params: &VehicleParams, ds: f64) -> Option<Pose> {
    step_arc_with(pose, steering_rad, params, ds, KinematicModel::Sine)
}

pub fn step_arc_with(
    pose: &Pose,
    steering_rad: f64,
    params: &VehicleParams,
    ds: f64,
    model: KinematicModel,
) -> Option<Pose> {
    let r = path_radius(steering_rad, params, model)?;
    Some(pose.compose(&arc_increment(r, ds)))
}

/// Generator for per-frame steering-wheel commands.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SteeringProfile {
    Constant {
        steering_rad: f64,
    },
    Sinusoid {
        amplitude_rad: f64,
        period_s: f64,
        #[serde(default)]
        phase_rad: f64,
    },
    /// Random piecewise-constant turns and straights joined by cosine ramps.
    Mixed {
        max_steering_rad: f64,
        #[serde(default = "default_segment_s")]
        segment_s: (f64, f64),
        #[serde(default = "default_ramp_s")]
        ramp_s: f64,
        #[serde(default)]
        seed: u64,
    },
    Explicit {
        values: Vec<f64>,
    },
}

fn default_segment_s() -> (f64, f64) {
    (2.0, 6.0)
}

fn default_ramp_s() -> f64 {
    1.0
}

impl SteeringProfile {
    pub fn build(&self, frames: usize, dt: f64) -> Vec<f64> {
        match self {
            SteeringProfile::Constant { steering_rad } => vec![*steering_rad; frames],
            SteeringProfile::Sinusoid {
                amplitude_rad,
                period_s,
                phase_rad,
            } => (0..frames)
                .map(|i| amplitude_rad * (std::f64::consts::TAU * i as f64 * dt / period_s + phase_rad).sin())
                .collect(),
            SteeringProfile::Mixed {
                max_steering_rad,
                segment_s,
                ramp_s,
                seed,
            } => mixed_profile(frames, dt, *max_steering_rad, *segment_s, *ramp_s, *seed),
            SteeringProfile::Explicit { values } => values.clone(),
        }
    }
}

fn mixed_profile(frames: usize, dt: f64, max: f64, segment_s: (f64, f64), ramp_s: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(frames);
    let mut level = 0.0;
    while out.len() < frames {
        let target = if rng.random_bool(0.25) {
            0.0
        } else {
            rng.random_range(-max..max)
        };
        let hold = rng.random_range(segment_s.0..segment_s.1.max(segment_s.0 + 1e-9));
        let ramp_frames = (ramp_s / dt).round().max(1.0) as usize;
        let hold_frames = (hold / dt).round().max(1.0) as usize;
        for k in 1..=ramp_frames {
            let w = 0.5 - 0.5 * (std::f64::consts::PI * k as f64 / ramp_frames as f64).cos();
            out.push(level + (target - level) * w);
        }
        out.extend(std::iter::repeat_n(target, hold_frames));
        level = target;
    }
    out.truncate(frames);
    out
}

/// Everything needed to drive one scenario through a world.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub frames: usize,
    pub dt: f64,
    pub speed_mps: f64,
    /// Steering-wheel command per frame; entry `i` drives the motion from frame `i−1` to `i`.
    pub steering_profile: Vec<f64>,
    pub lidar: LidarConfig,
    pub vehicle: VehicleParams,
    pub kinematics: KinematicModel,
    pub noise_seed: u64,
    /// Minimum obstacles per m² inside LiDAR range at every frame; 0 disables the check.
    pub min_obstacle_density: f64,
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.frames == 0 {
            return Err(SimError::InvalidConfig("frames must be > 0".into()));
        }
        if self.steering_profile.len() != self.frames {
            return Err(SimError::ProfileLengthMismatch {
                profile: self.steering_profile.len(),
                frames: self.frames,
            });
        }
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(SimError::InvalidConfig("dt must be > 0".into()));
        }
        if !(self.speed_mps.is_finite() && self.speed_mps > 0.0) {
            return Err(SimError::InvalidConfig("speed_mps must be > 0".into()));
        }
        if !(self.min_obstacle_density >= 0.0) {
            return Err(SimError::InvalidConfig("min_obstacle_density must be >= 0".into()));
        }
        self.vehicle
            .validate()
            .map_err(|e| SimError::InvalidConfig(e.to_string()))?;
        self.lidar.validate()
    }
}

/// Ground truth and sensor data of one simulated drive.
#[derive(Debug, Clone, PartialEq)]
pub struct DrivingLog {
    pub poses: Vec<Pose>,
    pub steering_truth: Vec<f64>,
    pub scans: Vec<PointCloud>,
    pub timestamps: Vec<f64>,
}

impl DrivingLog {
    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }
}

/// Per-frame noise seed: a SplitMix64 step over the scenario seed and frame.
pub fn frame_seed(noise_seed: u64, frame: usize) -> u64 {
    let mut z = noise_seed ^ (frame as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Ground-truth poses of the scenario relative to its first frame, without
/// rendering any scans. Depends only on the kinematic part of `cfg`.
pub fn plan_route(cfg: &ScenarioConfig) -> Result<Vec<Pose>, SimError> {
    cfg.validate()?;
    let ds = cfg.speed_mps * cfg.dt;
    // Planar state (x, y, yaw) keeps ground truth exactly in the ground plane.
    let mut position = Vector2::zeros();
    let mut yaw = 0.0;
    let mut poses = Vec::with_capacity(cfg.frames);
    for (frame, &steering_rad) in cfg.steering_profile.iter().enumerate() {
        let radius = path_radius(steering_rad, &cfg.vehicle, cfg.kinematics)
            .ok_or(SimError::InvalidSteering { frame, steering_rad })?;
        if frame > 0 {
            let inc = arc_increment(radius, ds);
            let step = inc.translation();
            let (s, c) = f64::sin_cos(yaw);
            position += Vector2::new(c * step.x - s * step.y, s * step.x + c * step.y);
            yaw += inc.yaw();
        }
        poses.push(Pose::from_yaw(yaw, Vector3::new(position.x, position.y, 0.0)));
    }
    Ok(poses)
}

/// Drives the scenario from the identity pose, one arc per frame.
pub fn run_scenario(world: &World, cfg: &ScenarioConfig) -> Result<DrivingLog, SimError> {
    run_scenario_from(world, cfg, &Pose::identity())
}

/// Like [`run_scenario`] but starting at `start` in world coordinates. Logged
/// poses are still relative to the first frame.
pub fn run_scenario_from(world: &World, cfg: &ScenarioConfig, start: &Pose) -> Result<DrivingLog, SimError> {
    let poses = plan_route(cfg)?;
    let mut scans = Vec::with_capacity(cfg.frames);
    for (frame, pose) in poses.iter().enumerate() {
        let sensor = start.compose(pose);
        let at = Vector2::new(sensor.translation().x, sensor.translation().y);
        let distance_m = world.clearance_at(&at);
        if distance_m < VEHICLE_CLEARANCE_M {
            return Err(SimError::Collision { frame, distance_m });
        }
        if cfg.min_obstacle_density > 0.0 {
            let density = world.density_near(&at, cfg.lidar.max_range_m);
            if density < cfg.min_obstacle_density {
                return Err(SimError::SparseWorld {
                    frame,
                    density,
                    minimum: cfg.min_obstacle_density,
                });
            }
        }
        scans.push(lidar_scan(
            world,
            &sensor,
            &cfg.lidar,
            frame_seed(cfg.noise_seed, frame),
        ));
    }
    Ok(DrivingLog {
        poses,
        steering_truth: cfg.steering_profile.clone(),
        scans,
        timestamps: (0..cfg.frames).map(|i| i as f64 * cfg.dt).collect(),
    })
}

/// Generates a world around the scenario's route (starting at `start`) with
/// obstacles removed from a corridor of half-width `clearance_m` along it.
pub fn world_for_route(
    seed: u64,
    extent_m: f64,
    density: f64,
    cfg: &ScenarioConfig,
    start: &Pose,
    clearance_m: f64,
) -> Result<World, SimError> {
    let route: Vec<Vector2<f64>> = plan_route(cfg)?
        .iter()
        .map(|p| {
            let t = *start.compose(p).translation();
            Vector2::new(t.x, t.y)
        })
        .collect();
    Ok(generate_world(seed, extent_m, density)?.clear_route(&route, clearance_m))
}
