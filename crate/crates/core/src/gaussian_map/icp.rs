//! Point-to-point ICP with a fitness / error acceptance gate.

use std::collections::HashMap;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{estimate_rigid_transform, PointSet, Pose};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IcpParams {
    pub max_iters: usize,
    /// Correspondence rejection distance in meters.
    pub max_distance: f64,
    /// Accept only if fitness is strictly above this.
    pub min_fitness: f64,
    /// Accept only if inlier RMSE is strictly below this (meters).
    pub max_error: f64,
    /// Stop when the transform changes less than this between iterations.
    pub convergence: f64,
}

impl Default for IcpParams {
    fn default() -> Self {
        Self {
            max_iters: 30,
            max_distance: 0.05,
            min_fitness: 0.2,
            max_error: 0.1,
            convergence: 1e-8,
        }
    }
}

/// Alignment statistics at convergence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IcpFit {
    /// Maps source points onto the destination set.
    pub transform: Pose,
    /// Fraction of source points with a destination neighbour within `max_distance`.
    pub fitness: f64,
    /// RMSE over inlier correspondences (meters); 0 when there are none.
    pub error: f64,
    /// Inlier RMSE before any motion, i.e. at the identity.
    pub initial_error: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum IcpResult {
    Accepted(IcpFit),
    Rejected(IcpFit),
}

impl IcpResult {
    pub fn fit(&self) -> &IcpFit {
        match self {
            IcpResult::Accepted(f) | IcpResult::Rejected(f) => f,
        }
    }

    pub fn accepted(&self) -> Option<&IcpFit> {
        match self {
            IcpResult::Accepted(f) => Some(f),
            IcpResult::Rejected(_) => None,
        }
    }
}

/// Uniform hash grid for radius-bounded nearest neighbour queries.
pub(crate) struct PointGrid<'a> {
    cell: f64,
    cells: HashMap<[i64; 3], Vec<usize>>,
    points: &'a [Vector3<f64>],
}

impl<'a> PointGrid<'a> {
    pub(crate) fn new(points: &'a [Vector3<f64>], cell: f64) -> Self {
        let mut cells: HashMap<[i64; 3], Vec<usize>> = HashMap::new();
        for (i, p) in points.iter().enumerate() {
            cells.entry(Self::key(p, cell)).or_default().push(i);
        }
        Self {
            cell,
            cells,
            points,
        }
    }

    fn key(p: &Vector3<f64>, cell: f64) -> [i64; 3] {
        [
            (p.x / cell).floor() as i64,
            (p.y / cell).floor() as i64,
            (p.z / cell).floor() as i64,
        ]
    }

    /// Nearest point within `radius` (which must not exceed the cell size);
    /// ties go to the lower index.
    pub(crate) fn nearest(&self, q: &Vector3<f64>, radius: f64) -> Option<(usize, f64)> {
        debug_assert!(radius <= self.cell * (1.0 + 1e-12));
        let k = Self::key(q, self.cell);
        let r2 = radius * radius;
        let mut best: Option<(usize, f64)> = None;
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    let Some(bucket) = self.cells.get(&[k[0] + dx, k[1] + dy, k[2] + dz]) else {
                        continue;
                    };
                    for &i in bucket {
                        let d2 = (self.points[i] - q).norm_squared();
                        if d2 > r2 {
                            continue;
                        }
                        best = match best {
                            Some((j, b)) if b < d2 || (b == d2 && j < i) => Some((j, b)),
                            _ => Some((i, d2)),
                        };
                    }
                }
            }
        }
        best.map(|(i, d2)| (i, d2.sqrt()))
    }
}

struct Correspondences {
    src: Vec<Vector3<f64>>,
    dst: Vec<Vector3<f64>>,
    sq_error: f64,
}

fn correspond(src: &PointSet, grid: &PointGrid<'_>, dst: &[Vector3<f64>], pose: &Pose, radius: f64) -> Correspondences {
    let mut out = Correspondences {
        src: Vec::new(),
        dst: Vec::new(),
        sq_error: 0.0,
    };
    for p in src.iter() {
        let moved = pose.transform_point(p);
        if let Some((j, d)) = grid.nearest(&moved, radius) {
            out.src.push(*p);
            out.dst.push(dst[j]);
            out.sq_error += d * d;
        }
    }
    out
}

fn rms(pairs: &Correspondences) -> f64 {
    if pairs.src.is_empty() {
        0.0
    } else {
        (pairs.sq_error / pairs.src.len() as f64).sqrt()
    }
}

/// Aligns `src` onto `dst` starting from the identity.
pub fn icp_align(src: &PointSet, dst: &PointSet, params: &IcpParams) -> Result<IcpResult> {
    if src.is_empty() || dst.is_empty() {
        return Err(Error::EmptyPointSet);
    }
    if !(params.max_distance > 0.0) {
        return Err(Error::invalid("ICP max_distance must be positive"));
    }
    let grid = PointGrid::new(dst.points(), params.max_distance);
    let mut current = Pose::identity();
    let mut iterations = 0;
    let initial = correspond(src, &grid, dst.points(), &current, params.max_distance);
    let initial_error = rms(&initial);
    for _ in 0..params.max_iters {
        let pairs = correspond(src, &grid, dst.points(), &current, params.max_distance);
        if pairs.src.len() < 3 {
            break;
        }
        let src_in = PointSet::from_iter(pairs.src);
        let dst_in = PointSet::from_iter(pairs.dst);
        let Ok(next) = estimate_rigid_transform(&src_in, &dst_in) else {
            break;
        };
        iterations += 1;
        let change = (next.rotation - current.rotation).norm() + (next.translation - current.translation).norm();
        current = next;
        if change < params.convergence {
            break;
        }
    }
    let pairs = correspond(src, &grid, dst.points(), &current, params.max_distance);
    let n_in = pairs.src.len();
    let fit = IcpFit {
        transform: current,
        fitness: n_in as f64 / src.len() as f64,
        error: rms(&pairs),
        initial_error,
        iterations,
    };
    if fit.fitness > params.min_fitness && fit.error < params.max_error {
        Ok(IcpResult::Accepted(fit))
    } else {
        Ok(IcpResult::Rejected(fit))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cloud(seed: u64, n: usize) -> PointSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                Vector3::new(
                    rng.random_range(-0.5..0.5),
                    rng.random_range(-0.5..0.5),
                    rng.random_range(-0.5..0.5),
                )
            })
            .collect()
    }

    #[test]
    fn identical_sets_align_at_identity() {
        let src = cloud(1, 200);
        let res = icp_align(&src, &src, &IcpParams::default()).unwrap();
        let fit = res.accepted().expect("accepted");
        assert_eq!(fit.fitness, 1.0);
        assert!(fit.error < 1e-12);
        assert!((fit.transform.rotation - nalgebra::Matrix3::identity()).amax() < 1e-12);
    }

    #[test]
    fn recovers_small_motion() {
        let src = cloud(2, 300);
        let truth = Pose::from_axis_angle(&Vector3::new(0.3, -0.2, 1.0), 2f64.to_radians(), Vector3::new(0.01, 0.0, 0.0));
        let dst = src.transformed(&truth);
        let params = IcpParams {
            max_distance: 0.1,
            ..IcpParams::default()
        };
        let res = icp_align(&src, &dst, &params).unwrap();
        let fit = res.accepted().expect("accepted");
        assert!((fit.transform.rotation - truth.rotation).amax() < 1e-6);
        assert!((fit.transform.translation - truth.translation).norm() < 1e-6);
        assert!(fit.fitness > 0.99);
    }

    #[test]
    fn far_apart_sets_are_rejected() {
        let src = cloud(3, 100);
        let dst = src.transformed(&Pose::from_translation(Vector3::new(10.0, 0.0, 0.0)));
        let params = IcpParams {
            max_distance: 0.1,
            ..IcpParams::default()
        };
        match icp_align(&src, &dst, &params).unwrap() {
            IcpResult::Rejected(fit) => assert_eq!(fit.fitness, 0.0),
            other => panic!("expected rejection, got {other:?}"),
        }
    }

    #[test]
    fn empty_inputs_error() {
        let empty = PointSet::default();
        assert!(matches!(
            icp_align(&empty, &cloud(1, 3), &IcpParams::default()),
            Err(Error::EmptyPointSet)
        ));
    }

    #[test]
    fn grid_nearest_matches_brute_force() {
        let pts = cloud(5, 500);
        let grid = PointGrid::new(pts.points(), 0.1);
        let queries = cloud(6, 200);
        for q in queries.iter() {
            let brute = pts
                .iter()
                .enumerate()
                .map(|(i, p)| (i, (p - q).norm()))
                .filter(|(_, d)| *d <= 0.1)
                .min_by(|a, b| a.1.total_cmp(&b.1));
            let got = grid.nearest(q, 0.1);
            assert_eq!(got.map(|g| g.0), brute.map(|b| b.0));
        }
    }
}
