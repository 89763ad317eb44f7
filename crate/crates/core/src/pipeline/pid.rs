//! Pose-following PID controller used as the baseline steering predictor.
//!
//! For each frame the controller sees the bearing of the waypoint at pose `i`
//! as seen from pose `i−k` (positive to the right, like steering) and turns it
//! into a steering-wheel angle.

use serde::{Deserialize, Serialize};

use super::{check_length, evaluate_mse, GroundTruth, LabelSource, PipelineError, PseudoLabelRecord};
use crate::geometry::relative_pose;
use crate::odometry::TrajectoryEstimate;
use crate::steering::VehicleParams;

/// Controller gains. Error in radians of bearing, output in radians of
/// steering-wheel angle, time in seconds.
///
/// The defaults are the optimum of [`tune_pid`] over [`tuning_grid`] on the
/// held-out drive of [`crate::pipeline::config::Config::pid_tuning`] (ICP
/// poses, k = 1), not on the bundled demo. The search prefers a pure
/// proportional controller: on piecewise-constant turns, integral and
/// derivative action only add lag. `kp` is close to `2·ratio·l_wb / ds`, the
/// small-angle inverse of the chord bearing at 5 m/s and 10 Hz, so the gains
/// are only meaningful at that speed and frame rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PidGains {
    pub kp: f64,
    pub ki: f64,
    pub kd: f64,
    /// Bound on the accumulated error integral (rad·s).
    pub integral_clamp: f64,
    pub output_clamp_rad: f64,
}

impl Default for PidGains {
    fn default() -> Self {
        Self {
            kp: 184.785,
            ki: 0.0,
            kd: 0.0,
            integral_clamp: 1.0,
            output_clamp_rad: 8.0,
        }
    }
}

impl PidGains {
    pub fn validate(&self) -> Result<(), PipelineError> {
        let all = [self.kp, self.ki, self.kd, self.integral_clamp, self.output_clamp_rad];
        if all.iter().any(|g| !g.is_finite()) {
            return Err(PipelineError::Config("pid gains must be finite".into()));
        }
        if !(self.output_clamp_rad > 0.0) {
            return Err(PipelineError::Config("pid.output_clamp_rad must be > 0".into()));
        }
        if self.integral_clamp < 0.0 {
            return Err(PipelineError::Config("pid.integral_clamp must be >= 0".into()));
        }
        Ok(())
    }
}

/// Discrete PID with a clamped integral and a clamped output.
#[derive(Debug, Clone)]
pub struct PidController {
    gains: PidGains,
    integral: f64,
    previous_error: Option<f64>,
}

impl PidController {
    pub fn new(gains: PidGains) -> Self {
        Self {
            gains,
            integral: 0.0,
            previous_error: None,
        }
    }

    /// Advances by `dt` seconds with the current `error`. The derivative term
    /// is zero on the first call and whenever `dt` is not positive.
    pub fn update(&mut self, error: f64, dt: f64) -> f64 {
        let g = &self.gains;
        let mut derivative = 0.0;
        if dt > 0.0 {
            self.integral = (self.integral + error * dt).clamp(-g.integral_clamp, g.integral_clamp);
            if let Some(prev) = self.previous_error {
                derivative = (error - prev) / dt;
            }
        }
        self.previous_error = Some(error);
        (g.kp * error + g.ki * self.integral + g.kd * derivative).clamp(-g.output_clamp_rad, g.output_clamp_rad)
    }

    pub fn reset(&mut self) {
        self.integral = 0.0;
        self.previous_error = None;
    }
}

/// PID labels for frames `k..len`, tagged [`LabelSource::Pid`].
///
/// The wheel angle and radius columns are derived from the output through the
/// vehicle geometry. Pose pairs that barely move have no defined bearing; they
/// hold the previous output and are flagged invalid.
pub fn pid_baseline_labels(
    trajectory: &TrajectoryEstimate,
    gains: &PidGains,
    params: &VehicleParams,
    k: usize,
) -> Result<Vec<PseudoLabelRecord>, PipelineError> {
    gains.validate()?;
    check_length(trajectory.len(), k)?;
    let poses = trajectory.poses();
    let times = trajectory.timestamps();
    let mut pid = PidController::new(*gains);
    let mut output = 0.0;
    let mut out = Vec::with_capacity(poses.len() - k);
    for i in k..poses.len() {
        let t = *relative_pose(&poses[i], &poses[i - k]).translation();
        let valid = t.x.hypot(t.y) >= params.min_motion_m;
        let dt = if i > k { times[i] - times[i - 1] } else { 0.0 };
        if valid {
            output = pid.update(t.x.atan2(t.y), dt);
        }
        let wheel = output / params.steering_ratio;
        out.push(PseudoLabelRecord {
            frame: i,
            timestamp: times[i],
            steering_pred_rad: output,
            wheel_angle_rad: wheel,
            radius_m: if wheel == 0.0 {
                f64::INFINITY
            } else {
                params.wheelbase_m / wheel.sin()
            },
            valid,
            source: LabelSource::Pid,
        });
    }
    Ok(out)
}

/// Result of a gain grid search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PidTuning {
    pub gains: PidGains,
    pub mse: f64,
    pub candidates: usize,
}

/// Exhaustive search over `kp × ki × kd`, keeping the clamps of `base`.
/// Ties keep the earliest candidate in iteration order.
pub fn tune_pid(
    trajectory: &TrajectoryEstimate,
    truth: &GroundTruth,
    params: &VehicleParams,
    k: usize,
    base: &PidGains,
    kp_grid: &[f64],
    ki_grid: &[f64],
    kd_grid: &[f64],
) -> Result<PidTuning, PipelineError> {
    let mut best: Option<PidTuning> = None;
    let mut candidates = 0;
    for &kp in kp_grid {
        for &ki in ki_grid {
            for &kd in kd_grid {
                candidates += 1;
                let gains = PidGains { kp, ki, kd, ..*base };
                let labels = pid_baseline_labels(trajectory, &gains, params, k)?;
                let mse = evaluate_mse(&labels, truth)?.mse;
                if best.as_ref().is_none_or(|b| mse < b.mse) {
                    best = Some(PidTuning {
                        gains,
                        mse,
                        candidates: 0,
                    });
                }
            }
        }
    }
    let mut best = best.ok_or_else(|| PipelineError::Config("empty pid gain grid".into()))?;
    best.candidates = candidates;
    Ok(best)
}

/// The `(kp, ki, kd)` grid behind the default gains.
pub fn tuning_grid() -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    (
        log_grid(10.0, 1000.0, 61),
        vec![0.0, 1.0, 3.0, 10.0, 30.0, 100.0],
        vec![0.0, 0.3, 1.0, 3.0, 10.0],
    )
}

/// `n` log-spaced values from `lo` to `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n <= 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..n)
        .map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Pose;
    use crate::simulator::arc_increment;
    use nalgebra::Vector3;

    fn arc(radius: f64, n: usize) -> TrajectoryEstimate {
        let step = arc_increment(radius, 0.5);
        let mut poses = vec![Pose::identity()];
        for _ in 1..n {
            poses.push(poses.last().unwrap().compose(&step));
        }
        TrajectoryEstimate::from_poses(poses, (0..n).map(|i| i as f64 * 0.1).collect()).unwrap()
    }

    #[test]
    fn straight_drive_gives_zero() {
        let step = Pose::from_yaw(0.0, Vector3::new(0.0, 0.5, 0.0));
        let mut poses = vec![Pose::identity()];
        for _ in 1..30 {
            poses.push(poses.last().unwrap().compose(&step));
        }
        let traj = TrajectoryEstimate::from_poses(poses, (0..30).map(f64::from).collect()).unwrap();
        let gains = PidGains {
            kp: 1.25,
            ki: 0.1,
            kd: 0.3,
            ..Default::default()
        };
        let labels = pid_baseline_labels(&traj, &gains, &VehicleParams::default(), 1).unwrap();
        assert_eq!(labels.len(), 29);
        assert!(labels
            .iter()
            .all(|r| r.steering_pred_rad.abs() < 1e-12 && r.source == LabelSource::Pid));
    }

    #[test]
    fn arc_output_settles_to_a_constant() {
        let gains = PidGains {
            kp: 150.0,
            ki: 20.0,
            kd: 2.0,
            integral_clamp: 0.05,
            output_clamp_rad: 8.0,
        };
        let labels = pid_baseline_labels(&arc(10.0, 200), &gains, &VehicleParams::default(), 1).unwrap();
        // Bearing of a 0.5 m chord on a 10 m circle is half the heading change.
        let bearing = 0.5 / 10.0 / 2.0;
        let steady = gains.kp * bearing + gains.ki * gains.integral_clamp;
        let tail = &labels[labels.len() - 50..];
        for r in tail {
            assert!(r.steering_pred_rad > 0.0);
            assert!(
                (r.steering_pred_rad - steady).abs() <= 0.05 * steady,
                "{} vs {steady}",
                r.steering_pred_rad
            );
        }
        // Left turns mirror right turns.
        let left = pid_baseline_labels(&arc(-10.0, 200), &gains, &VehicleParams::default(), 1).unwrap();
        assert!((left.last().unwrap().steering_pred_rad + labels.last().unwrap().steering_pred_rad).abs() < 1e-9);
    }

    #[test]
    fn integral_and_output_clamps_hold() {
        let gains = PidGains {
            kp: 0.0,
            ki: 1000.0,
            kd: 0.0,
            integral_clamp: 0.002,
            output_clamp_rad: 1.5,
        };
        let mut pid = PidController::new(gains);
        for _ in 0..100 {
            let u = pid.update(0.5, 0.1);
            assert!(u <= 2.0 + 1e-12 && u <= 1.5);
        }
        assert_eq!(pid.update(0.5, 0.1), 1.5);
        pid.reset();
        assert_eq!(pid.update(0.0, 0.1), 0.0);
        assert!(PidGains {
            output_clamp_rad: 0.0,
            ..gains
        }
        .validate()
        .is_err());
    }

    #[test]
    fn tuner_finds_the_geometric_gain_on_a_circle() {
        // On a steady circle with a pure P controller the best gain maps the
        // chord bearing onto the exact label.
        let params = VehicleParams::default();
        let traj = arc(20.0, 60);
        let truth_value = params.steering_ratio * (params.wheelbase_m / 20.0).asin();
        let truth = GroundTruth::from_sequence(traj.timestamps(), &vec![truth_value; 60]);
        let grid = log_grid(10.0, 1000.0, 401);
        let tuned = tune_pid(&traj, &truth, &params, 1, &PidGains::default(), &grid, &[0.0], &[0.0]).unwrap();
        let exact = truth_value / (0.5f64 / 20.0 / 2.0);
        assert!(
            (tuned.gains.kp - exact).abs() / exact < 0.01,
            "{} vs {exact}",
            tuned.gains.kp
        );
        assert_eq!(tuned.candidates, 401);
    }

    #[test]
    fn log_grid_endpoints() {
        let g = log_grid(1.0, 100.0, 3);
        assert!((g[0] - 1.0).abs() < 1e-12 && (g[1] - 10.0).abs() < 1e-9 && (g[2] - 100.0).abs() < 1e-9);
    }
}
