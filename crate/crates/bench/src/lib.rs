//! Deterministic inputs shared by the benchmarks.

use ep2_core::harness::{rng_from_seed, TeacherModel};
use ep2_core::{BinaryHeatmap, DMatrix, DescriptorSet, Keypoint, Raster};
use rand::Rng;

pub fn teacher(rows: usize, dim: usize, seed: u64) -> DescriptorSet {
    TeacherModel::isotropic(dim)
        .sample(rows, &mut rng_from_seed(seed))
        .expect("gaussian rows are non-zero")
}

pub fn random_matrix(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = rng_from_seed(seed);
    DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

/// Logits in [-5, 5] and a target with roughly `density` of cells set.
pub fn detection_pair(height: usize, width: usize, density: f64, seed: u64) -> (Raster, BinaryHeatmap) {
    let mut rng = rng_from_seed(seed);
    let logits = Raster::from_fn(height, width, |_, _| rng.random_range(-5.0..5.0)).unwrap();
    let cells = (0..height * width).map(|_| u8::from(rng.random_bool(density))).collect();
    (logits, BinaryHeatmap::new(height, width, cells).unwrap())
}

pub fn keypoints(n: usize, width: usize, height: usize, seed: u64) -> Vec<Keypoint> {
    let mut rng = rng_from_seed(seed);
    (0..n)
        .map(|_| {
            Keypoint::new(
                rng.random_range(0.0..width as f64),
                rng.random_range(0.0..height as f64),
                rng.random_range(-5.0..5.0),
            )
        })
        .collect()
}
