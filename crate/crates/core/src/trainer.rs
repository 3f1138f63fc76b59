//! Shared single-stage training loop: seeded mini-batches, a step-decay
//! schedule, per-epoch validation, and best-snapshot selection by noisy
//! validation error.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::correction::{batch_grads, CorrectedLoss};
use crate::error::{Error, Result};
use crate::numerics::{argmax, Matrix, MlpModel, OptimizerHyper, OptimizerState};
use crate::seeds;

/// How validation predictions are read off the network.
#[derive(Debug, Clone, Copy)]
pub(crate) enum ValPredictor<'a> {
    /// argmax of the softmax itself (no adaptation layer).
    Softmax,
    /// argmax of `T^T g`: the noisy-posterior fit used by stage 2.
    Adapted(&'a Matrix),
}

/// Fraction of instances misclassified under the given predictor.
pub(crate) fn classification_error(
    model: &MlpModel,
    features: &Matrix,
    labels: &[usize],
    predictor: ValPredictor<'_>,
) -> Result<f64> {
    if features.rows() == 0 {
        return Err(Error::precondition("empty evaluation set"));
    }
    if labels.len() != features.rows() {
        return Err(Error::shape("label count does not match feature rows"));
    }
    let indices: Vec<usize> = (0..features.rows()).collect();
    let wrong: Vec<Result<usize>> = indices
        .par_chunks(256)
        .map(|chunk| {
            let mut miss = 0;
            for &i in chunk {
                let (_, g) = model.forward(features.row(i))?;
                let pred = match predictor {
                    ValPredictor::Softmax => argmax(&g),
                    ValPredictor::Adapted(t) => argmax(&t.transposed_matvec(&g)?),
                };
                if pred != labels[i] {
                    miss += 1;
                }
            }
            Ok(miss)
        })
        .collect();
    let mut total = 0usize;
    for w in wrong {
        total += w?;
    }
    Ok(total as f64 / features.rows() as f64)
}

/// Clean-test accuracy: argmax of the softmax against clean labels.
pub(crate) fn accuracy(model: &MlpModel, features: &Matrix, labels: &[usize]) -> Result<f64> {
    Ok(1.0 - classification_error(model, features, labels, ValPredictor::Softmax)?)
}

#[derive(Debug, Clone)]
pub(crate) struct StageOpts {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerHyper,
    /// Learning rate multiplied by `decay_factor` after each listed epoch
    /// (1-based).
    pub decay_epochs: Vec<usize>,
    pub decay_factor: f64,
    /// Governs batch shuffling only.
    pub seed: u64,
}

impl StageOpts {
    fn lr_at_epoch(&self, base: f64, epoch: usize) -> f64 {
        let drops = self.decay_epochs.iter().filter(|&&d| d < epoch).count();
        base * self.decay_factor.powi(drops as i32)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct EpochStats {
    pub train_risk: f64,
    pub val_error: f64,
    pub test_accuracy: Option<f64>,
}

pub(crate) struct FitOutcome {
    pub model: MlpModel,
    pub best_val_error: f64,
    pub best_epoch: usize,
    /// Per-epoch stats; index 0 is the initial state with a train risk
    /// evaluated before any update.
    pub epochs: Vec<EpochStats>,
}

/// Seeded in-place Fisher-Yates; the draw sequence is pinned by this crate,
/// not by the rand crate's shuffle implementation.
pub(crate) fn shuffle_indices(n: usize, seed: u64) -> Vec<usize> {
    use rand::Rng;
    let mut indices: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        indices.swap(i, j);
    }
    indices
}

/// Trains `model` with the given per-sample loss, tracking noisy-validation
/// error each epoch and returning the parameter snapshot that minimized it
/// (ties keep the earliest epoch). With zero epochs the initial model is
/// returned along with its recorded validation error.
#[allow(clippy::too_many_arguments)]
pub(crate) fn fit(
    mut model: MlpModel,
    train_x: &Matrix,
    train_y: &[usize],
    val_x: &Matrix,
    val_y: &[usize],
    loss: &CorrectedLoss,
    predictor: ValPredictor<'_>,
    opts: &StageOpts,
    test: Option<(&Matrix, &[usize])>,
) -> Result<FitOutcome> {
    if train_x.rows() == 0 {
        return Err(Error::precondition("empty training set"));
    }
    let n = train_x.rows();
    let base_lr = opts.optimizer.learning_rate;
    let mut optimizer = OptimizerState::new(opts.optimizer, model.param_count())?;

    let eval_test = |model: &MlpModel| -> Result<Option<f64>> {
        test.map(|(tx, ty)| accuracy(model, tx, ty)).transpose()
    };

    let initial_val = classification_error(&model, val_x, val_y, predictor)?;
    let initial_risk = crate::correction::mean_loss(&model, train_x, train_y, loss)?;
    let mut best = model.clone();
    let mut best_val = initial_val;
    let mut best_epoch = 0;
    let mut epochs = vec![EpochStats {
        train_risk: initial_risk,
        val_error: initial_val,
        test_accuracy: eval_test(&model)?,
    }];

    let mut flat_params = Vec::with_capacity(model.param_count());
    let mut flat_grads = Vec::with_capacity(model.param_count());

    for epoch in 1..=opts.epochs {
        optimizer.set_learning_rate(opts.lr_at_epoch(base_lr, epoch))?;
        let order = shuffle_indices(n, seeds::derive_indexed(opts.seed, "epoch-batches", epoch as u64));
        let mut risk_sum = 0.0;
        for batch in order.chunks(opts.batch_size) {
            let grads = batch_grads(&model, train_x, train_y, batch, loss, false)?;
            risk_sum += grads.loss * batch.len() as f64;
            flat_params.clear();
            model.flatten_into(&mut flat_params);
            flat_grads.clear();
            grads.params.flatten_into(&mut flat_grads);
            optimizer.step(&mut flat_params, &flat_grads)?;
            model.assign_from_flat(&flat_params)?;
        }
        let train_risk = risk_sum / n as f64;
        let val_error = classification_error(&model, val_x, val_y, predictor)?;
        epochs.push(EpochStats {
            train_risk,
            val_error,
            test_accuracy: eval_test(&model)?,
        });
        if val_error < best_val {
            best_val = val_error;
            best = model.clone();
            best_epoch = epoch;
        }
    }

    Ok(FitOutcome {
        model: best,
        best_val_error: best_val,
        best_epoch,
        epochs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::{generate_gaussian_mixture, GaussianMixtureSpec};
    use crate::numerics::Activation;

    fn blobs(n: usize, seed: u64) -> (Matrix, Vec<usize>) {
        let means = Matrix::from_rows(&[vec![2.0, 0.0], vec![-2.0, 0.0]]).unwrap();
        let spec = GaussianMixtureSpec::uniform_priors(means, 0.5).unwrap();
        let ds = generate_gaussian_mixture(&spec, n, seed).unwrap();
        let labels = ds.clean_labels().unwrap().to_vec();
        (ds.features, labels)
    }

    #[test]
    fn zero_epochs_returns_initial_model() {
        let (x, y) = blobs(40, 1);
        let model = MlpModel::random_init(&[2, 2], Activation::Identity, true, 5).unwrap();
        let out = fit(
            model.clone(),
            &x,
            &y,
            &x,
            &y,
            &CorrectedLoss::unweighted(),
            ValPredictor::Softmax,
            &StageOpts {
                epochs: 0,
                batch_size: 16,
                optimizer: OptimizerHyper::sgd_momentum(0.1, 0.9, 0.0),
                decay_epochs: vec![],
                decay_factor: 0.1,
                seed: 0,
            },
            None,
        )
        .unwrap();
        assert_eq!(out.model, model);
        assert_eq!(out.best_epoch, 0);
        assert_eq!(out.epochs.len(), 1);
    }

    #[test]
    fn separable_blobs_reach_low_error() {
        let (x, y) = blobs(300, 2);
        let (vx, vy) = blobs(100, 3);
        let model = MlpModel::random_init(&[2, 8, 2], Activation::Relu, true, 7).unwrap();
        let out = fit(
            model,
            &x,
            &y,
            &vx,
            &vy,
            &CorrectedLoss::unweighted(),
            ValPredictor::Softmax,
            &StageOpts {
                epochs: 30,
                batch_size: 32,
                optimizer: OptimizerHyper::sgd_momentum(0.05, 0.9, 1e-4),
                decay_epochs: vec![],
                decay_factor: 0.1,
                seed: 11,
            },
            None,
        )
        .unwrap();
        assert!(out.best_val_error < 0.02, "val error {}", out.best_val_error);
    }

    #[test]
    fn fit_is_deterministic() {
        let (x, y) = blobs(120, 4);
        let run = || {
            let model = MlpModel::random_init(&[2, 4, 2], Activation::Relu, true, 9).unwrap();
            fit(
                model,
                &x,
                &y,
                &x,
                &y,
                &CorrectedLoss::unweighted(),
                ValPredictor::Softmax,
                &StageOpts {
                    epochs: 5,
                    batch_size: 16,
                    optimizer: OptimizerHyper::sgd_momentum(0.05, 0.9, 0.0),
                    decay_epochs: vec![3],
                    decay_factor: 0.1,
                    seed: 21,
                },
                None,
            )
            .unwrap()
        };
        let a = run();
        let b = run();
        assert_eq!(a.model, b.model);
        assert_eq!(a.epochs, b.epochs);
        assert_eq!(a.best_val_error, b.best_val_error);
    }

    #[test]
    fn selected_epoch_attains_minimum() {
        let (x, y) = blobs(150, 6);
        let model = MlpModel::random_init(&[2, 4, 2], Activation::Relu, true, 3).unwrap();
        let out = fit(
            model,
            &x,
            &y,
            &x,
            &y,
            &CorrectedLoss::unweighted(),
            ValPredictor::Softmax,
            &StageOpts {
                epochs: 8,
                batch_size: 32,
                optimizer: OptimizerHyper::sgd_momentum(0.05, 0.9, 0.0),
                decay_epochs: vec![],
                decay_factor: 0.1,
                seed: 2,
            },
            None,
        )
        .unwrap();
        let min = out
            .epochs
            .iter()
            .map(|e| e.val_error)
            .fold(f64::INFINITY, f64::min);
        assert_eq!(out.epochs[out.best_epoch].val_error, min);
        assert_eq!(out.best_val_error, min);
    }
}
