//! Inputs shared by the kernel benchmarks.

use lcc_core::lagrange::worker_alphas;
use lcc_core::scheme::WorkerResult;
use lcc_core::{Scalar, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Uniform `[-1, 1]` entries from a fixed seed.
pub fn random_tensor<T: Scalar>(shape: &[usize], seed: u64) -> Tensor<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::<f64>::from_fn(shape, |_| rng.gen_range(-1.0..=1.0)).cast()
}

/// Fake worker outputs of shape `[batch, classes]`, one per worker on the
/// standard alpha grid.
pub fn worker_results(workers: usize, batch: usize, classes: usize) -> Vec<WorkerResult> {
    worker_alphas(workers)
        .into_iter()
        .enumerate()
        .map(|(n, alpha)| WorkerResult {
            worker: n,
            alpha,
            output: random_tensor(&[batch, classes], n as u64),
            latency: n as f64,
        })
        .collect()
}
