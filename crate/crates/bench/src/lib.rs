//! Shared fixtures for the criterion benchmarks under `benches/`.

use mndag_core::synth;
use mndag_core::{GenConfig, MnDag, Tensor};

/// A benchmark-sized synthetic dataset: the sampled DAG and its `N×T` series.
pub fn dataset(n: usize, t: usize, seed: u64) -> (MnDag, Tensor) {
    synth::simulate(&GenConfig::new(n, t, 0.5, 0.5, 0.5, seed)).expect("valid fixture config")
}
