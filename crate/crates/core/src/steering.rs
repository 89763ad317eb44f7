//! Steering-angle estimation from a pair of vehicle poses.
//!
//! The chain is relative pose → forward direction → turning radius →
//! Ackermann front-wheel angle → steering-wheel angle. Radii are signed:
//! positive for right turns, negative for left turns, `±∞` for straight
//! motion.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{forward_direction, relative_pose, Direction3, Pose};

/// `|d_X|` below this is treated as straight driving (infinite radius).
pub const STRAIGHT_EPS: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SteeringError {
    #[error("vehicle moved {distance_m:.3e} m, below the stationarity threshold {min_motion_m} m")]
    StationaryMotion { distance_m: f64, min_motion_m: f64 },
    #[error("turning radius {radius_m} m is shorter than the wheelbase {wheelbase_m} m")]
    RadiusTooSmall { radius_m: f64, wheelbase_m: f64 },
    #[error("invalid vehicle parameters: {0}")]
    InvalidParams(String),
}

/// Vehicle geometry needed to turn a path radius into a steering-wheel angle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VehicleParams {
    pub wheelbase_m: f64,
    /// Steering-wheel angle per front-wheel angle. 1.0 when labels are wheel angles.
    pub steering_ratio: f64,
    #[serde(default = "default_min_motion")]
    pub min_motion_m: f64,
}

fn default_min_motion() -> f64 {
    0.01
}

impl Default for VehicleParams {
    fn default() -> Self {
        Self::audi_q7_etron()
    }
}

impl VehicleParams {
    pub fn new(wheelbase_m: f64, steering_ratio: f64, min_motion_m: f64) -> Result<Self, SteeringError> {
        let p = Self {
            wheelbase_m,
            steering_ratio,
            min_motion_m,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), SteeringError> {
        if !(self.wheelbase_m.is_finite() && self.wheelbase_m > 0.0) {
            return Err(SteeringError::InvalidParams(format!(
                "wheelbase_m must be > 0, got {}",
                self.wheelbase_m
            )));
        }
        if !(self.steering_ratio.is_finite() && self.steering_ratio > 0.0) {
            return Err(SteeringError::InvalidParams(format!(
                "steering_ratio must be > 0, got {}",
                self.steering_ratio
            )));
        }
        if !(self.min_motion_m.is_finite() && self.min_motion_m >= 0.0) {
            return Err(SteeringError::InvalidParams(format!(
                "min_motion_m must be >= 0, got {}",
                self.min_motion_m
            )));
        }
        Ok(())
    }

    /// A2D2 recording vehicle.
    pub fn audi_q7_etron() -> Self {
        Self {
            wheelbase_m: 2.994,
            steering_ratio: 15.8,
            min_motion_m: default_min_motion(),
        }
    }

    /// nuScenes recording vehicle.
    pub fn renault_zoe() -> Self {
        Self {
            wheelbase_m: 2.924,
            steering_ratio: 15.2,
            min_motion_m: default_min_motion(),
        }
    }

    /// CARLA commands wheel angles directly, hence a unit ratio.
    pub fn tesla_model_3() -> Self {
        Self {
            wheelbase_m: 3.005,
            steering_ratio: 1.0,
            min_motion_m: default_min_motion(),
        }
    }
}

/// Which closed form to use for the X-intercept of the radius line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RadiusFormula {
    /// `r = t_Y · d_Y / d_X + t_X`, the intercept of the line through `t`
    /// perpendicular to `d`. Exact on circular arcs.
    #[default]
    Derived,
    /// `r = t_Y · d_X / d_Y + t_X` with the direction ratio swapped. Kept for
    /// comparison only; it returns `t_X` instead of infinity for straight motion.
    Printed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelStatus {
    Ok,
    Stationary,
    TooSharp,
}

/// Radius, wheel angle and steering-wheel angle for one pose pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SteeringEstimate {
    pub radius_m: f64,
    pub wheel_angle_rad: f64,
    pub steering_angle_rad: f64,
    pub valid: bool,
    pub status: LabelStatus,
}

fn planar_norm(rel: &Pose) -> f64 {
    let t = rel.translation();
    t.x.hypot(t.y)
}

/// Signed turning radius of the motion described by `rel`.
pub fn turning_radius(rel: &Pose, d: &Direction3, min_motion_m: f64) -> Result<f64, SteeringError> {
    turning_radius_with(rel, d, min_motion_m, RadiusFormula::Derived)
}

pub fn turning_radius_with(
    rel: &Pose,
    d: &Direction3,
    min_motion_m: f64,
    formula: RadiusFormula,
) -> Result<f64, SteeringError> {
    let distance_m = planar_norm(rel);
    if distance_m < min_motion_m || distance_m == 0.0 {
        return Err(SteeringError::StationaryMotion {
            distance_m,
            min_motion_m,
        });
    }
    let t = rel.translation();
    let (dx, dy) = (d.x(), d.y());
    let r = match formula {
        RadiusFormula::Derived => {
            if dx.abs() < STRAIGHT_EPS {
                return Ok(straight(dx));
            }
            t.y * (dy / dx) + t.x
        }
        RadiusFormula::Printed => {
            if dy.abs() < STRAIGHT_EPS {
                return Ok(straight(dx));
            }
            t.y * (dx / dy) + t.x
        }
    };
    Ok(r)
}

fn straight(dx: f64) -> f64 {
    if dx < 0.0 {
        f64::NEG_INFINITY
    } else {
        f64::INFINITY
    }
}

/// Ackermann front-wheel angle `δ = asin(l_wb / r)`; zero for infinite radius.
pub fn wheel_angle(radius_m: f64, params: &VehicleParams) -> Result<f64, SteeringError> {
    if radius_m.is_infinite() {
        return Ok(0.0);
    }
    let ratio = params.wheelbase_m / radius_m;
    if !(ratio.abs() <= 1.0) {
        return Err(SteeringError::RadiusTooSmall {
            radius_m,
            wheelbase_m: params.wheelbase_m,
        });
    }
    Ok(ratio.asin())
}

pub fn steering_angle(delta_rad: f64, params: &VehicleParams) -> f64 {
    params.steering_ratio * delta_rad
}

/// Pseudo steering label for the motion from `previous` to `current`.
///
/// Never fails: stationary pairs and radii below the wheelbase come back with
/// `valid == false`. Stationary pairs report a straight estimate; too-sharp
/// turns carry the measured radius and a wheel angle clamped to `±π/2`.
pub fn pseudo_label(current: &Pose, previous: &Pose, params: &VehicleParams) -> SteeringEstimate {
    pseudo_label_with(current, previous, params, RadiusFormula::Derived)
}

pub fn pseudo_label_with(
    current: &Pose,
    previous: &Pose,
    params: &VehicleParams,
    formula: RadiusFormula,
) -> SteeringEstimate {
    let rel = relative_pose(current, previous);
    estimate_from_relative(&rel, params, formula)
}

pub fn estimate_from_relative(rel: &Pose, params: &VehicleParams, formula: RadiusFormula) -> SteeringEstimate {
    let d = forward_direction(rel);
    let radius_m = match turning_radius_with(rel, &d, params.min_motion_m, formula) {
        Ok(r) => r,
        Err(_) => {
            return SteeringEstimate {
                radius_m: f64::INFINITY,
                wheel_angle_rad: 0.0,
                steering_angle_rad: 0.0,
                valid: false,
                status: LabelStatus::Stationary,
            }
        }
    };
    match wheel_angle(radius_m, params) {
        Ok(delta) => SteeringEstimate {
            radius_m,
            wheel_angle_rad: delta,
            steering_angle_rad: steering_angle(delta, params),
            valid: true,
            status: LabelStatus::Ok,
        },
        Err(_) => {
            let delta = std::f64::consts::FRAC_PI_2.copysign(radius_m);
            SteeringEstimate {
                radius_m,
                wheel_angle_rad: delta,
                steering_angle_rad: steering_angle(delta, params),
                valid: false,
                status: LabelStatus::TooSharp,
            }
        }
    }
}
