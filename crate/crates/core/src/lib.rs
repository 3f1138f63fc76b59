//! Label-noise learning with noise transition matrices.
//!
//! The crate trains classifiers from noisily labeled data through three
//! consistent loss corrections (forward, backward, and an inverse-free
//! importance reweighting) and implements T-revision: initialize a transition
//! matrix estimate from pseudo-anchor points, then learn an additive slack
//! correction jointly with the classifier, validated on noisy data only.
//!
//! Modules follow the pipeline:
//!
//! - [`numerics`]: matrices, the MLP with backprop, optimizers, gradient checks
//! - [`noise`]: transition matrices and label corruption
//! - [`datasets`]: synthetic Gaussian mixtures with exact posteriors, IDX/CSV
//!   ingestion, splits, anchor removal
//! - [`correction`]: the corrected losses and their analytic gradients
//! - [`estimation`]: stage 1, learning the noisy posterior and initializing
//!   the transition matrix from pseudo-anchors
//! - [`revision`]: stage 2, joint classifier/slack training, the
//!   generalization-bound diagnostic, and the end-to-end pipeline
//! - [`config`]: declarative experiment descriptions

pub mod config;
pub mod correction;
pub mod datasets;
pub mod error;
pub mod estimation;
pub mod noise;
pub mod numerics;
pub mod revision;
pub mod seeds;

pub(crate) mod trainer;

pub use config::ExperimentConfig;
pub use datasets::Dataset;
pub use error::{Error, Result};
pub use noise::TransitionMatrix;
pub use numerics::{Matrix, MlpModel};
