//! Static 3-D k-d tree over a point slice.
//!
//! The tree is implicit: a permutation of point indices where every subrange
//! `lo..hi` has its splitting point at the midpoint. The split axis is the one
//! with the largest spread in that subrange, so flat (planar) scans never split
//! on a constant coordinate.

use nalgebra::Vector3;

#[derive(Debug, Clone)]
pub struct KdTree {
    points: Vec<Vector3<f64>>,
    order: Vec<usize>,
    axes: Vec<u8>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub index: usize,
    pub dist_sq: f64,
}

impl KdTree {
    pub fn new(points: &[Vector3<f64>]) -> Self {
        let mut tree = Self {
            points: points.to_vec(),
            order: (0..points.len()).collect(),
            axes: vec![0; points.len()],
        };
        tree.build(0, points.len());
        tree
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, index: usize) -> &Vector3<f64> {
        &self.points[index]
    }

    fn build(&mut self, lo: usize, hi: usize) {
        if hi <= lo + 1 {
            return;
        }
        let mut min = Vector3::repeat(f64::INFINITY);
        let mut max = Vector3::repeat(f64::NEG_INFINITY);
        for &i in &self.order[lo..hi] {
            min = min.inf(&self.points[i]);
            max = max.sup(&self.points[i]);
        }
        let axis = (max - min).imax();
        let mid = lo + (hi - lo) / 2;
        let points = &self.points;
        self.order[lo..hi].select_nth_unstable_by(mid - lo, |&a, &b| {
            points[a][axis].total_cmp(&points[b][axis]).then(a.cmp(&b))
        });
        self.axes[mid] = axis as u8;
        self.build(lo, mid);
        self.build(mid + 1, hi);
    }

    /// Closest point to `query`. Ties go to the lowest point index.
    pub fn nearest(&self, query: &Vector3<f64>) -> Option<Neighbor> {
        self.nearest_within(query, f64::INFINITY)
    }

    /// Closest point with squared distance `<= max_dist_sq`.
    pub fn nearest_within(&self, query: &Vector3<f64>, max_dist_sq: f64) -> Option<Neighbor> {
        let mut best = Neighbor {
            index: usize::MAX,
            dist_sq: max_dist_sq,
        };
        self.search(0, self.points.len(), query, &mut best);
        (best.index != usize::MAX).then_some(best)
    }

    /// Up to `k` closest points, nearest first (ties by lowest index).
    pub fn nearest_k(&self, query: &Vector3<f64>, k: usize) -> Vec<Neighbor> {
        let mut found = Vec::with_capacity(k + 1);
        if k > 0 {
            self.search_k(0, self.points.len(), query, k, &mut found);
        }
        found
    }

    fn search_k(&self, lo: usize, hi: usize, q: &Vector3<f64>, k: usize, found: &mut Vec<Neighbor>) {
        if lo >= hi {
            return;
        }
        let mid = lo + (hi - lo) / 2;
        let idx = self.order[mid];
        let p = &self.points[idx];
        let cand = Neighbor {
            index: idx,
            dist_sq: (p - q).norm_squared(),
        };
        let pos = found.partition_point(|n| (n.dist_sq, n.index) < (cand.dist_sq, cand.index));
        if pos < k {
            found.insert(pos, cand);
            found.truncate(k);
        }
        let axis = self.axes[mid] as usize;
        let diff = q[axis] - p[axis];
        let (near, far) = if diff < 0.0 {
            ((lo, mid), (mid + 1, hi))
        } else {
            ((mid + 1, hi), (lo, mid))
        };
        self.search_k(near.0, near.1, q, k, found);
        if found.len() < k || diff * diff <= found[k - 1].dist_sq {
            self.search_k(far.0, far.1, q, k, found);
        }
    }

    fn search(&self, lo: usize, hi: usize, q: &Vector3<f64>, best: &mut Neighbor) {
        if lo >= hi {
            return;
        }
        let mid = lo + (hi - lo) / 2;
        let idx = self.order[mid];
        let p = &self.points[idx];
        let d = (p - q).norm_squared();
        if d < best.dist_sq || (d == best.dist_sq && idx < best.index) {
            *best = Neighbor { index: idx, dist_sq: d };
        }
        let axis = self.axes[mid] as usize;
        let diff = q[axis] - p[axis];
        let (near, far) = if diff < 0.0 {
            ((lo, mid), (mid + 1, hi))
        } else {
            ((mid + 1, hi), (lo, mid))
        };
        self.search(near.0, near.1, q, best);
        if diff * diff <= best.dist_sq {
            self.search(far.0, far.1, q, best);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute_force(points: &[Vector3<f64>], q: &Vector3<f64>) -> Neighbor {
        let mut best = Neighbor {
            index: usize::MAX,
            dist_sq: f64::INFINITY,
        };
        for (i, p) in points.iter().enumerate() {
            let d = (p - q).norm_squared();
            if d < best.dist_sq {
                best = Neighbor { index: i, dist_sq: d };
            }
        }
        best
    }

    #[test]
    fn matches_brute_force_on_random_queries() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let points: Vec<_> = (0..2000)
            .map(|_| {
                Vector3::new(
                    rng.random_range(-20.0..20.0),
                    rng.random_range(-20.0..20.0),
                    rng.random_range(-2.0..2.0),
                )
            })
            .collect();
        let tree = KdTree::new(&points);
        for _ in 0..1000 {
            let q = Vector3::new(
                rng.random_range(-25.0..25.0),
                rng.random_range(-25.0..25.0),
                rng.random_range(-3.0..3.0),
            );
            assert_eq!(tree.nearest(&q), Some(brute_force(&points, &q)));
        }
    }

    #[test]
    fn planar_and_duplicate_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut points: Vec<_> = (0..500)
            .map(|_| Vector3::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), 0.0))
            .collect();
        points.extend(points.clone());
        let tree = KdTree::new(&points);
        for _ in 0..300 {
            let q = Vector3::new(rng.random_range(-6.0..6.0), rng.random_range(-6.0..6.0), 0.0);
            let got = tree.nearest(&q).unwrap();
            assert_eq!(got, brute_force(&points, &q));
            assert!(got.index < 500);
        }
    }

    #[test]
    fn bounded_search_and_empty_tree() {
        let tree = KdTree::new(&[Vector3::new(1.0, 0.0, 0.0)]);
        assert!(tree.nearest_within(&Vector3::zeros(), 0.5).is_none());
        assert_eq!(tree.nearest_within(&Vector3::zeros(), 1.0).unwrap().index, 0);
        assert!(KdTree::new(&[]).nearest(&Vector3::zeros()).is_none());
    }

    #[test]
    fn k_nearest_matches_sorted_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let points: Vec<_> = (0..800)
            .map(|_| Vector3::new(rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0), 0.0))
            .collect();
        let tree = KdTree::new(&points);
        for k in [1, 2, 6, 20] {
            for _ in 0..100 {
                let q = Vector3::new(rng.random_range(-12.0..12.0), rng.random_range(-12.0..12.0), 0.0);
                let mut all: Vec<_> = points
                    .iter()
                    .enumerate()
                    .map(|(i, p)| Neighbor {
                        index: i,
                        dist_sq: (p - q).norm_squared(),
                    })
                    .collect();
                all.sort_by(|a, b| a.dist_sq.total_cmp(&b.dist_sq).then(a.index.cmp(&b.index)));
                all.truncate(k);
                assert_eq!(tree.nearest_k(&q, k), all);
            }
        }
        assert_eq!(KdTree::new(&points[..3]).nearest_k(&Vector3::zeros(), 10).len(), 3);
        assert!(tree.nearest_k(&Vector3::zeros(), 0).is_empty());
    }
}
