//! Shared fixtures for the benchmarks.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use deskslam::{GaussianMap, GaussianSplat, PointSet};

pub fn random_cloud(n: usize, seed: u64) -> PointSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    PointSet::new(
        (0..n)
            .map(|_| Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(0.5..3.0)))
            .collect(),
    )
    .unwrap()
}

/// `n` isotropic splats in front of an identity camera.
pub fn random_map(n: usize, seed: u64) -> GaussianMap {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    GaussianMap::from_splats(
        (0..n)
            .map(|_| {
                let z = rng.random_range(0.8..2.5);
                GaussianSplat::isotropic(
                    Vector3::new(rng.random_range(-0.5..0.5) * z, rng.random_range(-0.5..0.5) * z, z),
                    rng.random_range(0.01..0.05),
                    Vector3::new(rng.random(), rng.random(), rng.random()),
                    rng.random_range(0.3..0.9),
                )
                .unwrap()
            })
            .collect(),
    )
}
