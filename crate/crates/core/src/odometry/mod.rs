//! Vehicle poses from consecutive LiDAR scans.
//!
//! Scans are voxel-downsampled and aligned pairwise with ICP (point-to-line by
//! default, point-to-point on request); the incremental transforms are chained
//! into poses relative to the first scan. Any other pose source can stand in for this module by producing a
//! [`TrajectoryEstimate`].

mod align;
pub mod kdtree;

use std::collections::BTreeMap;

use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use align::{best_fit_transform, local_projector, point_to_line_step, tukey_weights};
use kdtree::KdTree;

use crate::geometry::{Pose, PoseChain};

/// Fewer accepted correspondences than this aborts an alignment.
pub const MIN_CORRESPONDENCES: usize = 10;

/// Neighbors (including the point itself) used to fit each target point's
/// local line or surface for the point-to-line metric.
pub const LOCAL_FIT_NEIGHBORS: usize = 6;

/// Lower bound on the robust residual scale of the point-to-line metric, so
/// exact data does not reject every pair with a tiny residual.
pub const ROBUST_SCALE_FLOOR_M: f64 = 0.002;

/// Error metric minimized by [`icp_align`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IcpMetric {
    /// Distance between matched points, solved in closed form each iteration.
    PointToPoint,
    /// Distance from the transformed source point to the local line (or
    /// surface) through its match, solved by Gauss-Newton with Tukey weights.
    /// Unlike point-to-point it does not need both scans to sample a surface
    /// at the same spots, which raycast scans from different poses never do.
    #[default]
    PointToLine,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OdometryError {
    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),
    #[error("insufficient overlap{}: {accepted} correspondences accepted (need {MIN_CORRESPONDENCES})", frame_suffix(*.frame))]
    InsufficientOverlap { frame: Option<usize>, accepted: usize },
    #[error("need at least 2 scans, got {0}")]
    TooFewScans(usize),
    #[error("length mismatch between {what}: {left} vs {right}")]
    LengthMismatch {
        what: &'static str,
        left: usize,
        right: usize,
    },
    #[error("invalid odometry config: {0}")]
    InvalidConfig(String),
    #[error("point {0} is not finite")]
    NonFinitePoint(usize),
    #[error("invalid trajectory: {0}")]
    InvalidTrajectory(String),
}

fn frame_suffix(frame: Option<usize>) -> String {
    frame.map(|f| format!(" at frame {f}")).unwrap_or_default()
}

/// A LiDAR scan in its sensor frame (meters).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointCloud {
    points: Vec<Vector3<f64>>,
}

impl PointCloud {
    pub fn new(points: Vec<Vector3<f64>>) -> Result<Self, OdometryError> {
        if let Some(i) = points.iter().position(|p| !p.iter().all(|v| v.is_finite())) {
            return Err(OdometryError::NonFinitePoint(i));
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[Vector3<f64>] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn transformed(&self, pose: &Pose) -> PointCloud {
        PointCloud {
            points: self.points.iter().map(|p| pose.transform_point(p)).collect(),
        }
    }

    /// Replaces the points of every occupied voxel by their centroid. Output
    /// order follows the voxel keys, so it is independent of input order
    /// within a voxel. `voxel_size_m == 0` returns a copy.
    pub fn voxel_downsample(&self, voxel_size_m: f64) -> PointCloud {
        if voxel_size_m <= 0.0 {
            return self.clone();
        }
        let mut cells: BTreeMap<[i64; 3], (Vector3<f64>, usize)> = BTreeMap::new();
        for p in &self.points {
            let key = [
                (p.x / voxel_size_m).floor() as i64,
                (p.y / voxel_size_m).floor() as i64,
                (p.z / voxel_size_m).floor() as i64,
            ];
            let cell = cells.entry(key).or_insert((Vector3::zeros(), 0));
            cell.0 += p;
            cell.1 += 1;
        }
        PointCloud {
            points: cells.into_values().map(|(sum, n)| sum / n as f64).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OdometryConfig {
    pub max_iterations: usize,
    /// Stop once the RMS residual changes by less than this (meters).
    pub convergence_tol: f64,
    /// Correspondences farther apart than this are rejected. `inf` disables rejection.
    pub max_correspondence_m: f64,
    /// Voxel edge for downsampling; 0 disables it.
    pub voxel_size_m: f64,
    /// Seed each alignment with the previous frame's increment.
    pub use_motion_prior: bool,
    pub metric: IcpMetric,
}

impl Default for OdometryConfig {
    fn default() -> Self {
        Self {
            max_iterations: 50,
            convergence_tol: 1e-6,
            max_correspondence_m: 1.0,
            voxel_size_m: 0.0,
            use_motion_prior: true,
            metric: IcpMetric::PointToLine,
        }
    }
}

impl OdometryConfig {
    pub fn validate(&self) -> Result<(), OdometryError> {
        if self.max_iterations == 0 {
            return Err(OdometryError::InvalidConfig("max_iterations must be > 0".into()));
        }
        if !(self.convergence_tol > 0.0) {
            return Err(OdometryError::InvalidConfig("convergence_tol must be > 0".into()));
        }
        if !(self.max_correspondence_m > 0.0) {
            return Err(OdometryError::InvalidConfig("max_correspondence_m must be > 0".into()));
        }
        if !(self.voxel_size_m >= 0.0 && self.voxel_size_m.is_finite()) {
            return Err(OdometryError::InvalidConfig(
                "voxel_size_m must be finite and >= 0".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IcpResult {
    /// Maps source-frame points into the target frame.
    pub transform: Pose,
    /// RMS distance of the accepted correspondences under `transform`.
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
    /// RMS residual at the start of each iteration.
    pub residual_history: Vec<f64>,
}

/// ICP aligning `source` onto `target`, starting from `init`.
pub fn icp_align(
    source: &PointCloud,
    target: &PointCloud,
    cfg: &OdometryConfig,
    init: &Pose,
) -> Result<IcpResult, OdometryError> {
    cfg.validate()?;
    let src = source.voxel_downsample(cfg.voxel_size_m);
    let tgt = target.voxel_downsample(cfg.voxel_size_m);
    if src.len() < MIN_CORRESPONDENCES || tgt.is_empty() {
        return Err(OdometryError::InsufficientOverlap {
            frame: None,
            accepted: src.len().min(tgt.len()),
        });
    }
    let tree = KdTree::new(tgt.points());
    let projectors: Vec<Matrix3<f64>> = match cfg.metric {
        IcpMetric::PointToPoint => Vec::new(),
        IcpMetric::PointToLine => tgt
            .points()
            .par_iter()
            .map(|p| {
                let hood: Vec<_> = tree
                    .nearest_k(p, LOCAL_FIT_NEIGHBORS)
                    .iter()
                    .map(|n| *tree.point(n.index))
                    .collect();
                local_projector(&hood)
            })
            .collect(),
    };
    let max_d2 = cfg.max_correspondence_m * cfg.max_correspondence_m;

    let mut transform = *init;
    let mut history = Vec::new();
    let mut residual = f64::INFINITY;
    let mut converged = false;
    let mut iterations = 0;

    while iterations < cfg.max_iterations {
        iterations += 1;
        let matches: Vec<Option<usize>> = src
            .points()
            .par_iter()
            .map(|p| {
                tree.nearest_within(&transform.transform_point(p), max_d2)
                    .map(|n| n.index)
            })
            .collect();
        let pairs: Vec<(usize, usize)> = matches
            .iter()
            .enumerate()
            .filter_map(|(i, m)| m.map(|j| (i, j)))
            .collect();
        let from: Vec<_> = pairs.iter().map(|&(i, _)| src.points()[i]).collect();
        let to: Vec<_> = pairs.iter().map(|&(_, j)| *tree.point(j)).collect();
        if from.len() < MIN_CORRESPONDENCES {
            return Err(OdometryError::InsufficientOverlap {
                frame: None,
                accepted: from.len(),
            });
        }
        let start_residual;
        match cfg.metric {
            IcpMetric::PointToPoint => {
                start_residual = rms(&transform, &from, &to);
                transform = best_fit_transform(&from, &to)?;
                residual = rms(&transform, &from, &to);
            }
            IcpMetric::PointToLine => {
                let proj: Vec<_> = pairs.iter().map(|&(_, j)| projectors[j]).collect();
                let errors: Vec<f64> = from
                    .iter()
                    .zip(&to)
                    .zip(&proj)
                    .map(|((p, q), m)| (m * (transform.transform_point(p) - q)).norm())
                    .collect();
                let weights = tukey_weights(&errors, ROBUST_SCALE_FLOOR_M);
                start_residual = weighted_rms(&errors, &weights);
                transform = point_to_line_step(&from, &to, &proj, &weights, &transform)?;
                let errors: Vec<f64> = from
                    .iter()
                    .zip(&to)
                    .zip(&proj)
                    .map(|((p, q), m)| (m * (transform.transform_point(p) - q)).norm())
                    .collect();
                residual = weighted_rms(&errors, &weights);
            }
        }
        let previous = history.last().copied();
        history.push(start_residual);
        if let Some(prev) = previous {
            if (prev - start_residual).abs() < cfg.convergence_tol {
                converged = true;
                break;
            }
        }
    }

    Ok(IcpResult {
        transform,
        residual,
        iterations,
        converged,
        residual_history: history,
    })
}

fn weighted_rms(errors: &[f64], weights: &[f64]) -> f64 {
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return f64::INFINITY;
    }
    (errors.iter().zip(weights).map(|(e, w)| w * e * e).sum::<f64>() / total).sqrt()
}

fn rms(t: &Pose, from: &[Vector3<f64>], to: &[Vector3<f64>]) -> f64 {
    let sum: f64 = from
        .iter()
        .zip(to)
        .map(|(p, q)| (t.transform_point(p) - q).norm_squared())
        .sum();
    (sum / from.len() as f64).sqrt()
}

/// Poses of every frame relative to the first one.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryEstimate {
    poses: Vec<Pose>,
    timestamps: Vec<f64>,
    residuals: Vec<f64>,
}

impl TrajectoryEstimate {
    /// Validates lengths and re-bases the poses so that the first one is the
    /// identity. Re-basing leaves every relative pose unchanged.
    pub fn new(poses: Vec<Pose>, timestamps: Vec<f64>, residuals: Vec<f64>) -> Result<Self, OdometryError> {
        if poses.len() != timestamps.len() {
            return Err(OdometryError::LengthMismatch {
                what: "poses and timestamps",
                left: poses.len(),
                right: timestamps.len(),
            });
        }
        if poses.len() != residuals.len() {
            return Err(OdometryError::LengthMismatch {
                what: "poses and residuals",
                left: poses.len(),
                right: residuals.len(),
            });
        }
        if timestamps.iter().any(|t| !t.is_finite()) {
            return Err(OdometryError::InvalidTrajectory("non-finite timestamp".into()));
        }
        let poses = match poses.first() {
            Some(first) if *first != Pose::identity() => {
                let base = first.inverse();
                let mut rebased: Vec<Pose> = poses.iter().map(|p| base.compose(p)).collect();
                rebased[0] = Pose::identity();
                rebased
            }
            _ => poses,
        };
        Ok(Self {
            poses,
            timestamps,
            residuals,
        })
    }

    /// Poses with zero residuals, e.g. ground truth or an external SLAM run.
    pub fn from_poses(poses: Vec<Pose>, timestamps: Vec<f64>) -> Result<Self, OdometryError> {
        let n = poses.len();
        Self::new(poses, timestamps, vec![0.0; n])
    }

    pub fn poses(&self) -> &[Pose] {
        &self.poses
    }

    pub fn timestamps(&self) -> &[f64] {
        &self.timestamps
    }

    pub fn residuals(&self) -> &[f64] {
        &self.residuals
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }
}

/// Chains scan-to-scan ICP increments into poses relative to scan 0.
///
/// Frame `i` aligns scan `i` onto scan `i−1`; with the motion prior enabled the
/// previous increment seeds the alignment (constant velocity).
pub fn estimate_trajectory(
    scans: &[PointCloud],
    timestamps: &[f64],
    cfg: &OdometryConfig,
) -> Result<TrajectoryEstimate, OdometryError> {
    cfg.validate()?;
    if scans.len() < 2 {
        return Err(OdometryError::TooFewScans(scans.len()));
    }
    if scans.len() != timestamps.len() {
        return Err(OdometryError::LengthMismatch {
            what: "scans and timestamps",
            left: scans.len(),
            right: timestamps.len(),
        });
    }
    let mut chain = PoseChain::new(Pose::identity());
    let mut poses = vec![Pose::identity()];
    let mut residuals = vec![0.0];
    let mut increment = Pose::identity();
    for frame in 1..scans.len() {
        let init = if cfg.use_motion_prior {
            increment
        } else {
            Pose::identity()
        };
        let result = icp_align(&scans[frame], &scans[frame - 1], cfg, &init).map_err(|e| match e {
            OdometryError::InsufficientOverlap { accepted, .. } => OdometryError::InsufficientOverlap {
                frame: Some(frame),
                accepted,
            },
            other => other,
        })?;
        increment = result.transform;
        poses.push(chain.push(&increment));
        residuals.push(result.residual);
    }
    TrajectoryEstimate::new(poses, timestamps.to_vec(), residuals)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    /// Anisotropic Gaussian blob: asymmetric enough for ICP to lock on.
    fn blob(seed: u64, n: usize) -> PointCloud {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let nx = Normal::new(0.0, 3.0).unwrap();
        let ny = Normal::new(0.0, 1.5).unwrap();
        let nz = Normal::new(0.0, 0.6).unwrap();
        PointCloud::new(
            (0..n)
                .map(|_| {
                    Vector3::new(
                        nx.sample(&mut rng),
                        ny.sample(&mut rng) + 0.2 * f64::powi(nx.sample(&mut rng), 2),
                        nz.sample(&mut rng),
                    )
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn identical_clouds_align_to_identity() {
        let c = blob(1, 500);
        let res = icp_align(&c, &c, &OdometryConfig::default(), &Pose::identity()).unwrap();
        let (dr, dt) = res.transform.max_abs_diff(&Pose::identity());
        assert!(dr < 1e-12 && dt < 1e-12);
        assert!(res.residual < 1e-12);
        assert!(res.converged);
    }

    #[test]
    fn recovers_noise_free_transform() {
        let src = blob(2, 1000);
        let truth = Pose::from_yaw(8f64.to_radians(), Vector3::new(0.3, -0.35, 0.05));
        let tgt = src.transformed(&truth);
        let cfg = OdometryConfig {
            max_correspondence_m: f64::INFINITY,
            ..Default::default()
        };
        let res = icp_align(&src, &tgt, &cfg, &Pose::identity()).unwrap();
        let (dr, dt) = res.transform.max_abs_diff(&truth);
        assert!(
            dr < 1e-6 && dt < 1e-6,
            "rot {dr:e} trans {dt:e} after {} its",
            res.iterations
        );
    }

    #[test]
    fn residual_never_increases_without_rejection() {
        let src = blob(3, 800);
        let truth = Pose::from_yaw(-0.15, Vector3::new(0.4, 0.2, 0.0));
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let noise = Normal::new(0.0, 0.02).unwrap();
        let tgt = PointCloud::new(
            src.transformed(&truth)
                .points()
                .iter()
                .map(|p| p + Vector3::new(noise.sample(&mut rng), noise.sample(&mut rng), noise.sample(&mut rng)))
                .collect(),
        )
        .unwrap();
        let cfg = OdometryConfig {
            max_correspondence_m: f64::INFINITY,
            convergence_tol: 1e-12,
            metric: IcpMetric::PointToPoint,
            ..Default::default()
        };
        let res = icp_align(&src, &tgt, &cfg, &Pose::identity()).unwrap();
        for w in res.residual_history.windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "{:?}", res.residual_history);
        }
        assert!(res.residual <= *res.residual_history.last().unwrap());
    }

    #[test]
    fn insufficient_overlap_reported() {
        let a = blob(5, 200);
        let far = a.transformed(&Pose::from_yaw(0.0, Vector3::new(500.0, 0.0, 0.0)));
        let err = icp_align(&a, &far, &OdometryConfig::default(), &Pose::identity()).unwrap_err();
        assert!(matches!(err, OdometryError::InsufficientOverlap { accepted: 0, .. }));
        let tiny = PointCloud::new(a.points()[..5].to_vec()).unwrap();
        assert!(icp_align(&tiny, &a, &OdometryConfig::default(), &Pose::identity()).is_err());
    }

    #[test]
    fn trajectory_preconditions() {
        let c = blob(6, 300);
        let cfg = OdometryConfig::default();
        assert_eq!(
            estimate_trajectory(&[c.clone()], &[0.0], &cfg),
            Err(OdometryError::TooFewScans(1))
        );
        let traj = estimate_trajectory(&[c.clone(), c.clone()], &[0.0, 0.1], &cfg).unwrap();
        for p in traj.poses() {
            let (dr, dt) = p.max_abs_diff(&Pose::identity());
            assert!(dr < 1e-12 && dt < 1e-12);
        }
        assert!(estimate_trajectory(&[c.clone(), c], &[0.0], &cfg).is_err());
    }

    #[test]
    fn far_frame_reports_index() {
        let a = blob(7, 300);
        let b = a.transformed(&Pose::from_yaw(0.0, Vector3::new(0.0, 0.2, 0.0)));
        let lost = a.transformed(&Pose::from_yaw(0.0, Vector3::new(300.0, 0.0, 0.0)));
        let err = estimate_trajectory(&[a, b, lost], &[0.0, 0.1, 0.2], &OdometryConfig::default()).unwrap_err();
        assert!(matches!(err, OdometryError::InsufficientOverlap { frame: Some(2), .. }));
    }

    #[test]
    fn voxel_downsample_merges_cells() {
        let c = PointCloud::new(vec![
            Vector3::new(0.01, 0.01, 0.0),
            Vector3::new(0.03, 0.05, 0.0),
            Vector3::new(1.0, 1.0, 0.0),
        ])
        .unwrap();
        let d = c.voxel_downsample(0.1);
        assert_eq!(d.len(), 2);
        assert!((d.points()[0] - Vector3::new(0.02, 0.03, 0.0)).norm() < 1e-12);
        assert_eq!(c.voxel_downsample(0.0), c);
        assert!(PointCloud::new(vec![Vector3::new(f64::NAN, 0.0, 0.0)]).is_err());
    }

    #[test]
    fn config_validation() {
        let bad = OdometryConfig {
            max_iterations: 0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = OdometryConfig {
            convergence_tol: 0.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
