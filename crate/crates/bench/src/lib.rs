//! Shared fixtures for the criterion benches.

use trev_core::datasets::{generate_gaussian_mixture, Dataset, GaussianMixtureSpec};
use trev_core::noise::{build_symmetric, corrupt_labels, TransitionMatrix};
use trev_core::numerics::{Activation, Matrix, MlpModel};

pub fn ring_mixture(classes: usize, dim: usize) -> GaussianMixtureSpec {
    let mut means = Matrix::zeros(classes, dim);
    for i in 0..classes {
        let angle = 2.0 * std::f64::consts::PI * i as f64 / classes as f64;
        means.set(i, 0, 3.0 * angle.cos());
        means.set(i, 1, 3.0 * angle.sin());
    }
    GaussianMixtureSpec::uniform_priors(means, 1.0).unwrap()
}

pub fn noisy_dataset(n: usize, classes: usize, rate: f64) -> (Dataset, TransitionMatrix) {
    let spec = ring_mixture(classes, 2);
    let ds = generate_gaussian_mixture(&spec, n, 7).unwrap();
    let t = build_symmetric(rate, classes).unwrap();
    let noisy = corrupt_labels(ds.clean_labels().unwrap(), &t, 8).unwrap();
    (ds.with_noisy_labels(noisy).unwrap(), t)
}

pub fn small_model(input_dim: usize, hidden: usize, classes: usize) -> MlpModel {
    MlpModel::random_init(&[input_dim, hidden, classes], Activation::Relu, true, 42).unwrap()
}
