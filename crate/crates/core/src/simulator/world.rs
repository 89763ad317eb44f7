use nalgebra::Vector2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};

use super::SimError;
use crate::geometry::Pose;

/// Probability that a generated obstacle is a wall rather than a pole.
pub const WALL_FRACTION: f64 = 0.3;
const WALL_LENGTH_M: (f64, f64) = (2.0, 8.0);
const POLE_RADIUS_M: (f64, f64) = (0.1, 0.4);

/// A vertical obstacle, described by its ground-plane footprint.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Obstacle {
    Wall { a: Vector2<f64>, b: Vector2<f64> },
    Pole { center: Vector2<f64>, radius: f64 },
}

impl Obstacle {
    pub fn center(&self) -> Vector2<f64> {
        match *self {
            Obstacle::Wall { a, b } => (a + b) / 2.0,
            Obstacle::Pole { center, .. } => center,
        }
    }

    /// Radius of a circle around [`Obstacle::center`] enclosing the footprint.
    pub fn bound(&self) -> f64 {
        match *self {
            Obstacle::Wall { a, b } => (b - a).norm() / 2.0,
            Obstacle::Pole { radius, .. } => radius,
        }
    }

    /// Distance along the ray `origin + s·dir` (unit `dir`) to the first hit.
    pub fn intersect(&self, origin: &Vector2<f64>, dir: &Vector2<f64>) -> Option<f64> {
        match *self {
            Obstacle::Wall { a, b } => {
                let e = b - a;
                let denom = cross(dir, &e);
                if denom.abs() < 1e-15 {
                    return None;
                }
                let w = a - origin;
                let s = cross(&w, &e) / denom;
                let tau = cross(&w, dir) / denom;
                (s >= 0.0 && (0.0..=1.0).contains(&tau)).then_some(s)
            }
            Obstacle::Pole { center, radius } => {
                let m = origin - center;
                let b = m.dot(dir);
                let c = m.norm_squared() - radius * radius;
                let disc = b * b - c;
                if disc < 0.0 {
                    return None;
                }
                let root = disc.sqrt();
                let near = -b - root;
                if near >= 0.0 {
                    Some(near)
                } else {
                    let far = -b + root;
                    (far >= 0.0).then_some(far)
                }
            }
        }
    }

    /// Shortest ground-plane distance from `p` to the footprint (0 inside a pole).
    pub fn distance_to(&self, p: &Vector2<f64>) -> f64 {
        match *self {
            Obstacle::Wall { a, b } => {
                let e = b - a;
                let len2 = e.norm_squared();
                let tau = if len2 > 0.0 {
                    ((p - a).dot(&e) / len2).clamp(0.0, 1.0)
                } else {
                    0.0
                };
                (a + e * tau - p).norm()
            }
            Obstacle::Pole { center, radius } => ((p - center).norm() - radius).max(0.0),
        }
    }

    fn transformed(&self, pose: &Pose) -> Obstacle {
        let map = |p: &Vector2<f64>| {
            let q = pose.transform_point(&nalgebra::Vector3::new(p.x, p.y, 0.0));
            Vector2::new(q.x, q.y)
        };
        match self {
            Obstacle::Wall { a, b } => Obstacle::Wall { a: map(a), b: map(b) },
            Obstacle::Pole { center, radius } => Obstacle::Pole {
                center: map(center),
                radius: *radius,
            },
        }
    }
}

fn cross(a: &Vector2<f64>, b: &Vector2<f64>) -> f64 {
    a.x * b.y - a.y * b.x
}

/// Static planar world the simulated LiDAR observes.
#[derive(Debug, Clone, PartialEq)]
pub struct World {
    pub obstacles: Vec<Obstacle>,
    pub seed: u64,
}

impl World {
    pub fn new(obstacles: Vec<Obstacle>, seed: u64) -> Self {
        Self { obstacles, seed }
    }

    /// Obstacles per m² whose centers lie within `radius_m` of `at`.
    pub fn density_near(&self, at: &Vector2<f64>, radius_m: f64) -> f64 {
        let r2 = radius_m * radius_m;
        let count = self
            .obstacles
            .iter()
            .filter(|o| (o.center() - at).norm_squared() <= r2)
            .count();
        count as f64 / (std::f64::consts::PI * r2)
    }

    /// Distance from `p` to the closest obstacle footprint (`inf` if empty).
    pub fn clearance_at(&self, p: &Vector2<f64>) -> f64 {
        self.obstacles
            .iter()
            .map(|o| o.distance_to(p))
            .fold(f64::INFINITY, f64::min)
    }

    /// A copy without the obstacles closer than `clearance_m` to any route point.
    pub fn clear_route(&self, route: &[Vector2<f64>], clearance_m: f64) -> World {
        World {
            obstacles: self
                .obstacles
                .iter()
                .filter(|o| {
                    // Cheap reject on the bounding circle before the exact distance.
                    route
                        .iter()
                        .all(|p| (o.center() - p).norm() - o.bound() >= clearance_m || o.distance_to(p) >= clearance_m)
                })
                .copied()
                .collect(),
            seed: self.seed,
        }
    }

    /// The same world moved rigidly by `pose` (its planar part).
    pub fn transformed(&self, pose: &Pose) -> World {
        World {
            obstacles: self.obstacles.iter().map(|o| o.transformed(pose)).collect(),
            seed: self.seed,
        }
    }
}

/// Scatters a Poisson number of walls and poles (mean `density · extent²`)
/// uniformly over the square `[-extent/2, extent/2]²`.
pub fn generate_world(seed: u64, extent_m: f64, density: f64) -> Result<World, SimError> {
    if !(extent_m.is_finite() && extent_m > 0.0) {
        return Err(SimError::InvalidConfig(format!(
            "world extent must be > 0, got {extent_m}"
        )));
    }
    if !(density.is_finite() && density > 0.0) {
        return Err(SimError::InvalidConfig(format!(
            "obstacle density must be > 0, got {density}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mean = density * extent_m * extent_m;
    let count = Poisson::new(mean)
        .map_err(|e| SimError::InvalidConfig(e.to_string()))?
        .sample(&mut rng) as usize;
    let half = extent_m / 2.0;
    let obstacles = (0..count)
        .map(|_| {
            let center = Vector2::new(rng.random_range(-half..half), rng.random_range(-half..half));
            if rng.random_bool(WALL_FRACTION) {
                let len = rng.random_range(WALL_LENGTH_M.0..WALL_LENGTH_M.1);
                let phi = rng.random_range(0.0..std::f64::consts::PI);
                let half_dir = Vector2::new(phi.cos(), phi.sin()) * (len / 2.0);
                Obstacle::Wall {
                    a: center - half_dir,
                    b: center + half_dir,
                }
            } else {
                Obstacle::Pole {
                    center,
                    radius: rng.random_range(POLE_RADIUS_M.0..POLE_RADIUS_M.1),
                }
            }
        })
        .collect();
    Ok(World { obstacles, seed })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_world() {
        let a = generate_world(42, 100.0, 0.05).unwrap();
        let b = generate_world(42, 100.0, 0.05).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, generate_world(43, 100.0, 0.05).unwrap());
    }

    #[test]
    fn count_matches_poisson_expectation() {
        // Poisson(λ = 0.05 · 200²): mean 2000, σ = √2000.
        let w = generate_world(7, 200.0, 0.05).unwrap();
        let sigma = 2000f64.sqrt();
        assert!(
            (w.obstacles.len() as f64 - 2000.0).abs() <= 3.0 * sigma,
            "{}",
            w.obstacles.len()
        );
        let walls = w
            .obstacles
            .iter()
            .filter(|o| matches!(o, Obstacle::Wall { .. }))
            .count() as f64;
        let n = w.obstacles.len() as f64;
        let sd = (n * WALL_FRACTION * (1.0 - WALL_FRACTION)).sqrt();
        assert!((walls - n * WALL_FRACTION).abs() <= 3.0 * sd);
    }

    #[test]
    fn bad_parameters_rejected() {
        assert!(generate_world(1, 0.0, 0.05).is_err());
        assert!(generate_world(1, 10.0, 0.0).is_err());
        assert!(generate_world(1, f64::NAN, 0.05).is_err());
    }

    #[test]
    fn ray_intersections() {
        let wall = Obstacle::Wall {
            a: Vector2::new(-1.0, 5.0),
            b: Vector2::new(1.0, 5.0),
        };
        let o = Vector2::zeros();
        assert_eq!(wall.intersect(&o, &Vector2::new(0.0, 1.0)), Some(5.0));
        assert_eq!(wall.intersect(&o, &Vector2::new(0.0, -1.0)), None);
        assert_eq!(wall.intersect(&o, &Vector2::new(1.0, 0.0)), None);

        let pole = Obstacle::Pole {
            center: Vector2::new(0.0, 10.0),
            radius: 0.5,
        };
        assert!((pole.intersect(&o, &Vector2::new(0.0, 1.0)).unwrap() - 9.5).abs() < 1e-12);
        assert_eq!(pole.intersect(&o, &Vector2::new(1.0, 0.0)), None);
    }

    #[test]
    fn distances_and_route_clearing() {
        let wall = Obstacle::Wall {
            a: Vector2::new(-1.0, 5.0),
            b: Vector2::new(1.0, 5.0),
        };
        assert!((wall.distance_to(&Vector2::new(0.0, 2.0)) - 3.0).abs() < 1e-12);
        assert!((wall.distance_to(&Vector2::new(4.0, 9.0)) - 5.0).abs() < 1e-12);
        let pole = Obstacle::Pole {
            center: Vector2::new(3.0, 0.0),
            radius: 0.5,
        };
        assert!((pole.distance_to(&Vector2::zeros()) - 2.5).abs() < 1e-12);
        assert_eq!(pole.distance_to(&Vector2::new(3.1, 0.0)), 0.0);

        let world = World::new(vec![wall, pole], 0);
        assert!((world.clearance_at(&Vector2::zeros()) - 2.5).abs() < 1e-12);
        let route: Vec<_> = (0..5).map(|i| Vector2::new(0.0, i as f64 * 0.5)).collect();
        assert_eq!(world.clear_route(&route, 2.0).obstacles.len(), 2);
        assert_eq!(world.clear_route(&route, 2.6).obstacles, vec![wall]);
        assert!(world.clear_route(&route, 3.1).obstacles.is_empty());
    }
}
