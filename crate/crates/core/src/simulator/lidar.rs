use std::f64::consts::{PI, TAU};

use nalgebra::{Vector2, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::world::World;
use super::SimError;
use crate::geometry::Pose;
use crate::odometry::PointCloud;

/// Planar scanner mounted at the vehicle reference point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LidarConfig {
    pub beam_count: usize,
    pub max_range_m: f64,
    /// Horizontal field of view centered on +Y; `2π` for a full sweep.
    pub azimuth_fov_rad: f64,
    pub range_noise_sigma_m: f64,
}

impl Default for LidarConfig {
    fn default() -> Self {
        Self {
            beam_count: 720,
            max_range_m: 40.0,
            azimuth_fov_rad: TAU,
            range_noise_sigma_m: 0.0,
        }
    }
}

impl LidarConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.beam_count == 0 {
            return Err(SimError::InvalidConfig("lidar.beam_count must be > 0".into()));
        }
        if !(self.max_range_m.is_finite() && self.max_range_m > 0.0) {
            return Err(SimError::InvalidConfig("lidar.max_range_m must be > 0".into()));
        }
        if !(self.azimuth_fov_rad > 0.0 && self.azimuth_fov_rad <= TAU) {
            return Err(SimError::InvalidConfig(
                "lidar.azimuth_fov_rad must be in (0, 2π]".into(),
            ));
        }
        if !(self.range_noise_sigma_m.is_finite() && self.range_noise_sigma_m >= 0.0) {
            return Err(SimError::InvalidConfig("lidar.range_noise_sigma_m must be >= 0".into()));
        }
        Ok(())
    }

    /// Beam azimuths, measured from +Y and positive towards +X (the right).
    pub fn azimuths(&self) -> Vec<f64> {
        let n = self.beam_count;
        if self.azimuth_fov_rad >= TAU - 1e-12 {
            (0..n).map(|k| -PI + TAU * k as f64 / n as f64).collect()
        } else if n == 1 {
            vec![0.0]
        } else {
            let half = self.azimuth_fov_rad / 2.0;
            (0..n)
                .map(|k| -half + self.azimuth_fov_rad * k as f64 / (n - 1) as f64)
                .collect()
        }
    }
}

/// Raycasts the world from `pose` and returns the hits in the sensor frame.
///
/// Beams that hit nothing within range produce no point. Range noise is drawn
/// from a generator seeded with `noise_seed`, so equal inputs give equal clouds.
pub fn lidar_scan(world: &World, pose: &Pose, cfg: &LidarConfig, noise_seed: u64) -> PointCloud {
    let origin = Vector2::new(pose.translation().x, pose.translation().y);
    let candidates: Vec<_> = world
        .obstacles
        .iter()
        .filter(|o| (o.center() - origin).norm() - o.bound() <= cfg.max_range_m)
        .collect();
    let noise = (cfg.range_noise_sigma_m > 0.0).then(|| Normal::new(0.0, cfg.range_noise_sigma_m).unwrap());
    let mut rng = ChaCha8Rng::seed_from_u64(noise_seed);
    let rot = pose.rotation();

    let mut points = Vec::with_capacity(cfg.beam_count);
    for azimuth in cfg.azimuths() {
        let (s, c) = azimuth.sin_cos();
        let local = Vector3::new(s, c, 0.0);
        let world_dir = rot * local;
        let dir = Vector2::new(world_dir.x, world_dir.y).normalize();
        let hit = candidates
            .iter()
            .filter_map(|o| o.intersect(&origin, &dir))
            .fold(f64::INFINITY, f64::min);
        // Draw noise for every beam so the noise sequence does not depend on hits.
        let eps = noise.as_ref().map_or(0.0, |n| n.sample(&mut rng));
        if hit <= cfg.max_range_m {
            let range = (hit + eps).max(0.0);
            points.push(local * range);
        }
    }
    PointCloud::new(points).expect("raycast hits are finite")
}
