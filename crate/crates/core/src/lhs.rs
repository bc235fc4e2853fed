//! Latin hypercube sampling.

use rand::seq::SliceRandom;
use rand::Rng;

/// `n` points in `[low, high)^dim`: each coordinate hits every one of the `n`
/// equal-width strata exactly once, uniformly within the stratum.
pub fn latin_hypercube<R: Rng + ?Sized>(n: usize, dim: usize, low: f64, high: f64, rng: &mut R) -> Vec<Vec<f64>> {
    let mut points = vec![vec![0.0; dim]; n];
    let width = (high - low) / n as f64;
    let mut strata: Vec<usize> = (0..n).collect();
    for k in 0..dim {
        strata.shuffle(rng);
        for (i, point) in points.iter_mut().enumerate() {
            let jitter: f64 = rng.random();
            point[k] = low + (strata[i] as f64 + jitter) * width;
        }
    }
    points
}
