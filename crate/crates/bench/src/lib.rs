//! Fixtures shared by the benchmarks.

use mdlsel_core::envelope::CompressionLine;
use mdlsel_core::rng::stream;
use mdlsel_core::Feature;
use ndarray::Array2;
use rand::Rng;

/// Uniform inputs in `[0, 1)` with random binary labels.
pub fn batch(rows: usize, cols: usize, seed: u64) -> (Array2<f64>, Vec<usize>) {
    let mut rng = stream(seed, 0, "bench-batch");
    let x = Array2::from_shape_fn((rows, cols), |_| rng.random::<f64>());
    let y = (0..rows).map(|_| rng.random_range(0..2)).collect();
    (x, y)
}

/// Lines with fixed costs up to 1e6 bits and rates below one bit.
pub fn random_lines(count: usize, seed: u64) -> Vec<CompressionLine> {
    let mut rng = stream(seed, 0, "bench-lines");
    (0..count)
        .map(|i| {
            let feature = if i % 2 == 0 { Feature::Digit } else { Feature::Color };
            CompressionLine::new(rng.random_range(0.0..1e6), rng.random_range(0.0..1.0), feature, i)
        })
        .collect()
}
