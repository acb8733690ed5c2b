//! Shared benchmark fixtures: a seeded fixture-shaped model and input, built
//! once per bench without any training.

use fei_core::nn::train::fixture_architecture;
use fei_core::rng::rng_from_seed;
use fei_core::{NetworkModel, Tensor};
use rand::Rng;

/// The fixture CNN shape with seeded untrained weights.
pub fn bench_model() -> NetworkModel {
    fixture_architecture(3, 42)
}

/// A seeded `[1, 32, 32]` input in `[0, 1]`.
pub fn bench_input() -> Tensor {
    let mut rng = rng_from_seed(7);
    let mut x = Tensor::zeros(&[1, 32, 32]);
    for v in x.data_mut() {
        *v = rng.random_range(0.0..1.0);
    }
    x
}
