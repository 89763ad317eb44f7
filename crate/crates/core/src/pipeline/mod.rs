//! Orchestration: poses in, steering labels and evaluation reports out.

pub mod config;
pub mod io;
pub mod pid;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::relative_pose;
use crate::odometry::{estimate_trajectory, OdometryConfig, OdometryError, PointCloud, TrajectoryEstimate};
use crate::simulator::SimError;
use crate::steering::{estimate_from_relative, RadiusFormula, VehicleParams};

pub use pid::{pid_baseline_labels, tune_pid, tuning_grid, PidGains, PidTuning};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("trajectory has {len} poses, need more than k = {k}")]
    TrajectoryTooShort { len: usize, k: usize },
    #[error("temporal interval k must be >= 1")]
    InvalidInterval,
    #[error("no frame of the predictions has a valid comparison in the ground truth")]
    NoOverlap,
    #[error("{path}:{line}: {message}")]
    Parse { path: String, line: usize, message: String },
    #[error("{path}: field `{field}`{}: {message}", frame.map(|f| format!(" of frame {f}")).unwrap_or_default())]
    Schema {
        path: String,
        field: String,
        frame: Option<usize>,
        message: String,
    },
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("invalid config: {0}")]
    Config(String),
    #[error(transparent)]
    Odometry(#[from] OdometryError),
    #[error(transparent)]
    Simulation(#[from] SimError),
}

impl PipelineError {
    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        PipelineError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

/// Which predictor produced a label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelSource {
    Proposed,
    Pid,
}

impl LabelSource {
    pub fn as_str(self) -> &'static str {
        match self {
            LabelSource::Proposed => "proposed",
            LabelSource::Pid => "pid",
        }
    }
}

/// One steering label, assigned to the later frame of its pose pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PseudoLabelRecord {
    pub frame: usize,
    pub timestamp: f64,
    pub steering_pred_rad: f64,
    pub wheel_angle_rad: f64,
    /// Signed turning radius; `±inf` for straight motion.
    pub radius_m: f64,
    /// `false` when the label was carried forward from an earlier frame.
    pub valid: bool,
    pub source: LabelSource,
}

/// Options for the proposed predictor beyond the vehicle geometry.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LabelOptions {
    pub radius_formula: RadiusFormula,
    /// Negate every output, for datasets whose steering sign is left-positive.
    pub flip_steering_sign: bool,
}

fn check_length(len: usize, k: usize) -> Result<(), PipelineError> {
    if k == 0 {
        return Err(PipelineError::InvalidInterval);
    }
    if len <= k {
        return Err(PipelineError::TrajectoryTooShort { len, k });
    }
    Ok(())
}

/// Labels frames `k..len` from the pose pairs `(i, i−k)`.
pub fn generate_pseudo_labels(
    trajectory: &TrajectoryEstimate,
    params: &VehicleParams,
    k: usize,
) -> Result<Vec<PseudoLabelRecord>, PipelineError> {
    generate_pseudo_labels_with(trajectory, params, k, &LabelOptions::default())
}

pub fn generate_pseudo_labels_with(
    trajectory: &TrajectoryEstimate,
    params: &VehicleParams,
    k: usize,
    options: &LabelOptions,
) -> Result<Vec<PseudoLabelRecord>, PipelineError> {
    check_length(trajectory.len(), k)?;
    let poses = trajectory.poses();
    let sign = if options.flip_steering_sign { -1.0 } else { 1.0 };
    let estimates: Vec<_> = (k..poses.len())
        .into_par_iter()
        .map(|i| estimate_from_relative(&relative_pose(&poses[i], &poses[i - k]), params, options.radius_formula))
        .collect();

    // Invalid frames hold the last valid steering (a held wheel); before the
    // first valid frame that is straight ahead.
    let mut held = (0.0, 0.0, f64::INFINITY);
    Ok(estimates
        .iter()
        .enumerate()
        .map(|(n, est)| {
            let frame = n + k;
            if est.valid {
                held = (
                    sign * est.steering_angle_rad,
                    sign * est.wheel_angle_rad,
                    sign * est.radius_m,
                );
            }
            PseudoLabelRecord {
                frame,
                timestamp: trajectory.timestamps()[frame],
                steering_pred_rad: held.0,
                wheel_angle_rad: held.1,
                radius_m: held.2,
                valid: est.valid,
                source: LabelSource::Proposed,
            }
        })
        .collect())
}

/// Ground-truth steering per frame.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub frames: Vec<usize>,
    pub timestamps: Vec<f64>,
    pub steering_rad: Vec<f64>,
}

impl GroundTruth {
    /// Frames numbered `0..steering.len()`.
    pub fn from_sequence(timestamps: &[f64], steering_rad: &[f64]) -> Self {
        Self {
            frames: (0..steering_rad.len()).collect(),
            timestamps: timestamps.to_vec(),
            steering_rad: steering_rad.to_vec(),
        }
    }

    fn lookup(&self) -> std::collections::HashMap<usize, f64> {
        self.frames
            .iter()
            .copied()
            .zip(self.steering_rad.iter().copied())
            .collect()
    }
}

/// MSE over the frames whose ground truth falls into one `|steering|` quantile band.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileBin {
    pub lower_abs_rad: f64,
    pub upper_abs_rad: f64,
    pub n_frames: usize,
    pub mse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mse: f64,
    /// Valid predictions with a ground-truth counterpart.
    pub n_frames: usize,
    /// Predictions excluded because they were flagged invalid.
    pub n_invalid: usize,
    pub bins: Vec<QuantileBin>,
}

/// Number of `|steering|` quantile bands in [`EvalReport::bins`].
pub const EVAL_BINS: usize = 4;

/// Mean squared steering error of the valid predictions against ground truth.
pub fn evaluate_mse(predictions: &[PseudoLabelRecord], truth: &GroundTruth) -> Result<EvalReport, PipelineError> {
    let lookup = truth.lookup();
    let mut n_invalid = 0;
    let mut pairs = Vec::with_capacity(predictions.len());
    for rec in predictions {
        if !rec.valid {
            n_invalid += 1;
            continue;
        }
        if let Some(&y) = lookup.get(&rec.frame) {
            pairs.push((y, rec.steering_pred_rad));
        }
    }
    if pairs.is_empty() {
        return Err(PipelineError::NoOverlap);
    }
    let sq = |&(y, p): &(f64, f64)| (p - y) * (p - y);
    let mse = pairs.iter().map(sq).sum::<f64>() / pairs.len() as f64;

    let mut by_mag = pairs.clone();
    by_mag.sort_by(|a, b| a.0.abs().total_cmp(&b.0.abs()));
    let n = by_mag.len();
    let bins = (0..EVAL_BINS)
        .filter_map(|b| {
            let chunk = &by_mag[b * n / EVAL_BINS..(b + 1) * n / EVAL_BINS];
            let (first, last) = (chunk.first()?, chunk.last()?);
            Some(QuantileBin {
                lower_abs_rad: first.0.abs(),
                upper_abs_rad: last.0.abs(),
                n_frames: chunk.len(),
                mse: chunk.iter().map(sq).sum::<f64>() / chunk.len() as f64,
            })
        })
        .collect();
    Ok(EvalReport {
        mse,
        n_frames: n,
        n_invalid,
        bins,
    })
}

/// Scans to labels in one call: odometry, then [`generate_pseudo_labels_with`].
pub fn label_scans(
    scans: &[PointCloud],
    timestamps: &[f64],
    odometry: &OdometryConfig,
    params: &VehicleParams,
    k: usize,
    options: &LabelOptions,
) -> Result<(TrajectoryEstimate, Vec<PseudoLabelRecord>), PipelineError> {
    let trajectory = estimate_trajectory(scans, timestamps, odometry)?;
    let labels = generate_pseudo_labels_with(&trajectory, params, k, options)?;
    Ok((trajectory, labels))
}
