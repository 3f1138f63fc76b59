//! Generalization-gap diagnostic for the reweighted estimator.
//!
//! For a depth-`d` bias-free network with ReLU-family activations, weight
//! Frobenius norms at most `M_1..M_d`, inputs bounded by `B`, an `L`-Lipschitz
//! loss bounded by `M`, and a valid (diagonally dominant) revised transition,
//! the gap between expected and empirical reweighted risk is at most
//!
//! `2 B C L (sqrt(2 d ln 2) + 1) prod_i M_i / sqrt(n)
//!  + C M sqrt(ln(1/delta) / (2 n))`
//!
//! with probability `1 - delta`. Logarithms are natural.

use crate::error::{Error, Result};
use crate::numerics::{MlpModel, EPS_LOG};

#[derive(Debug, Clone, PartialEq)]
pub struct BoundInputs {
    /// Bound on the input norm, `||x|| <= B`.
    pub input_bound: f64,
    pub classes: usize,
    /// Lipschitz constant of the loss in the logits (1 for cross-entropy).
    pub lipschitz: f64,
    /// Upper bound on the per-sample loss.
    pub loss_bound: f64,
    /// Frobenius-norm bounds of the weight matrices, one per layer. Biases,
    /// when the model has them, are outside this diagnostic.
    pub layer_norm_bounds: Vec<f64>,
    pub sample_size: usize,
    /// Confidence parameter in (0, 1).
    pub confidence: f64,
}

impl BoundInputs {
    pub fn validate(&self) -> Result<()> {
        if !(self.input_bound > 0.0 && self.lipschitz > 0.0 && self.loss_bound > 0.0) {
            return Err(Error::domain("bound inputs must be positive"));
        }
        if self.classes < 2 || self.sample_size == 0 {
            return Err(Error::domain("need at least 2 classes and 1 sample"));
        }
        if self.layer_norm_bounds.is_empty()
            || self.layer_norm_bounds.iter().any(|&m| !(m > 0.0))
        {
            return Err(Error::domain("layer norm bounds must be positive"));
        }
        if !(0.0 < self.confidence && self.confidence < 1.0) {
            return Err(Error::domain("confidence must lie in (0, 1)"));
        }
        Ok(())
    }

    /// Reads the diagnostic inputs off a trained model and its training set:
    /// B is the largest input norm, the norm bounds are the actual Frobenius
    /// norms, L = 1 and M = -ln(EPS_LOG) for the clamped cross-entropy.
    pub fn for_model(
        model: &MlpModel,
        features: &crate::numerics::Matrix,
        confidence: f64,
    ) -> Result<Self> {
        let input_bound = (0..features.rows())
            .map(|i| {
                features
                    .row(i)
                    .iter()
                    .map(|v| v * v)
                    .sum::<f64>()
                    .sqrt()
            })
            .fold(0.0f64, f64::max);
        let inputs = BoundInputs {
            input_bound: input_bound.max(f64::MIN_POSITIVE),
            classes: model.output_dim(),
            lipschitz: 1.0,
            loss_bound: -EPS_LOG.ln(),
            layer_norm_bounds: model.weight_frobenius_norms(),
            sample_size: features.rows(),
            confidence,
        };
        inputs.validate()?;
        Ok(inputs)
    }
}

/// Evaluates the bound. Inputs are assumed validated.
pub fn generalization_bound(b: &BoundInputs) -> f64 {
    let d = b.layer_norm_bounds.len() as f64;
    let prod: f64 = b.layer_norm_bounds.iter().product();
    let n = b.sample_size as f64;
    let first = 2.0 * b.input_bound * b.classes as f64 * b.lipschitz
        * ((2.0 * d * std::f64::consts::LN_2).sqrt() + 1.0)
        * prod
        / n.sqrt();
    let second =
        b.classes as f64 * b.loss_bound * ((1.0 / b.confidence).ln() / (2.0 * n)).sqrt();
    first + second
}
