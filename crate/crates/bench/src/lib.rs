//! Shared fixtures for the criterion benchmarks.

use mica_core::simgen::{generate, whiten, Design, DgpSpec, InnovationDist};
use mica_core::SeriesMatrix;

/// Whitened draw of a simulation design with the true group sizes.
pub fn whitened(design: Design, p: usize, n: usize, seed: u64) -> (SeriesMatrix, Vec<usize>) {
    let dist = if design == Design::MicaEx2 {
        InnovationDist::Exponential
    } else {
        InnovationDist::Normal
    };
    let data = generate(&DgpSpec::new(design, p, n, dist, seed)).expect("valid design");
    let (w, _) = whiten(&data.y).expect("full rank");
    (w, data.groups_true.sizes().to_vec())
}
