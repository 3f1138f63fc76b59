//! Stage 2: initialize the network under the frozen transition estimate,
//! then learn the classifier and the slack correction jointly, selecting by
//! noisy-validation error. Also houses the generalization-bound diagnostic
//! and the end-to-end pipeline entry point.

mod bound;
mod history;
mod pipeline;

pub use bound::{generalization_bound, BoundInputs};
pub use history::{EpochRecord, TrainHistory};
pub use pipeline::{
    gaussian_spec_from_config, prepare_corrupted, prepare_data, run_t_revision, PreparedData,
    RunReport, RunSummary,
};

use crate::config::{MethodConfig, ModelConfig, TrainConfig};
use crate::correction::{batch_grads, mean_loss, CorrectedLoss};
use crate::datasets::Dataset;
use crate::error::{Error, Result};
use crate::noise::{project_to_valid, TransitionMatrix};
use crate::numerics::{
    Activation, Matrix, MlpModel, OptimizerHyper, OptimizerState,
};
use crate::seeds;
use crate::trainer::{accuracy, classification_error, fit, shuffle_indices, StageOpts, ValPredictor};

/// Which corrected loss drives stage 2; the revision machinery is shared
/// between the reweight pipeline and its forward-correction baseline.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StageLoss {
    Reweight,
    Forward,
}

impl StageLoss {
    fn build(self, t_eff: Matrix, weight_detach: bool) -> Result<CorrectedLoss> {
        match self {
            StageLoss::Reweight => CorrectedLoss::reweight(t_eff, weight_detach),
            StageLoss::Forward => {
                // The forward loss of a raw matrix: constructed through the
                // same reweight entry point is wrong, so validate lightly and
                // wrap directly.
                Ok(CorrectedLoss::forward_raw(t_eff))
            }
        }
    }
}

/// Frozen initial estimate plus the learnable slack and its optimizer.
#[derive(Debug, Clone)]
pub struct RevisionState {
    pub t_hat: TransitionMatrix,
    /// Starts as the zero matrix.
    pub delta_t: Matrix,
    /// Project `t_hat + delta_t` onto valid transition matrices after every
    /// update. Off by default: the slack is allowed to roam and only the
    /// validation-selected snapshot matters.
    pub enforce_valid: bool,
    optimizer: OptimizerState,
}

impl RevisionState {
    /// Optimizer covers the model parameters followed by the `C*C` slack
    /// entries, in that order.
    pub fn new(
        t_hat: TransitionMatrix,
        model: &MlpModel,
        hyper: OptimizerHyper,
        enforce_valid: bool,
    ) -> Result<Self> {
        let c = t_hat.num_classes();
        let optimizer = OptimizerState::new(hyper, model.param_count() + c * c)?;
        Ok(RevisionState {
            delta_t: Matrix::zeros(c, c),
            t_hat,
            enforce_valid,
            optimizer,
        })
    }

    pub fn effective_transition(&self) -> Matrix {
        let mut t = self.t_hat.entries().clone();
        t.scaled_add(&self.delta_t, 1.0)
            .expect("slack shape matches by construction");
        t
    }
}

/// Trains a fresh network with the stage loss at the frozen `t_hat`
/// (slack zero), selecting by noisy-validation error of the adapted output.
pub fn stage2_initialize(
    train: &Dataset,
    val: &Dataset,
    t_hat: &TransitionMatrix,
    stage_loss: StageLoss,
    method: &MethodConfig,
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    seed: u64,
    test: Option<(&Matrix, &[usize])>,
) -> Result<(MlpModel, TrainHistory, f64)> {
    let train_y = train.noisy_labels()?;
    let val_y = val.noisy_labels()?;
    let model = MlpModel::random_init(
        &model_cfg.dims(train.dim(), train.classes),
        Activation::Relu,
        model_cfg.biases,
        seeds::derive(seed, "stage2-init"),
    )?;
    let loss = stage_loss.build(t_hat.entries().clone(), method.weight_detach)?;
    let opts = StageOpts {
        epochs: train_cfg.stage2_init_epochs,
        batch_size: train_cfg.batch_size,
        optimizer: OptimizerHyper::sgd_momentum(
            train_cfg.stage2_init_lr,
            train_cfg.momentum,
            train_cfg.weight_decay,
        ),
        decay_epochs: train_cfg.stage2_init_decay_epochs.clone(),
        decay_factor: train_cfg.lr_decay_factor,
        seed: seeds::derive(seed, "stage2-init-batches"),
    };
    let adapted = t_hat.entries().clone();
    let out = fit(
        model,
        &train.features,
        train_y,
        &val.features,
        val_y,
        &loss,
        ValPredictor::Adapted(&adapted),
        &opts,
        test,
    )?;
    let history = TrainHistory::from_stage(&out, None);
    Ok((out.model, history, out.best_val_error))
}

/// Outcome of the joint revision phase.
#[derive(Debug)]
pub struct ReviseOutcome {
    pub model: MlpModel,
    pub delta_t: Matrix,
    pub history: TrainHistory,
    pub best_val_error: f64,
}

/// Jointly updates the network and the slack with the configured optimizer
/// (Adam by default), recording per-epoch noisy-validation error, train risk,
/// and — when the true transition is supplied — the estimation error.
/// Snapshot selection follows the minimum noisy-validation error; epoch 0 in
/// the history is the state at entry.
#[allow(clippy::too_many_arguments)]
pub fn stage2_revise(
    train: &Dataset,
    val: &Dataset,
    model: MlpModel,
    mut state: RevisionState,
    stage_loss: StageLoss,
    method: &MethodConfig,
    train_cfg: &TrainConfig,
    seed: u64,
    t_true: Option<&TransitionMatrix>,
    test: Option<(&Matrix, &[usize])>,
) -> Result<ReviseOutcome> {
    let train_y = train.noisy_labels()?;
    let val_y = val.noisy_labels()?;
    let n = train.len();
    let c = state.t_hat.num_classes();
    let mut model = model;

    let eval_epoch = |model: &MlpModel, t_eff: &Matrix, state: &RevisionState| -> Result<(f64, Option<f64>, Option<f64>)> {
        let val_error =
            classification_error(model, &val.features, val_y, ValPredictor::Adapted(t_eff))?;
        let est = t_true
            .map(|t| {
                crate::noise::estimation_error(t, state.t_hat.entries(), Some(&state.delta_t))
            })
            .transpose()?;
        let acc = test
            .map(|(tx, ty)| accuracy(model, tx, ty))
            .transpose()?;
        Ok((val_error, est, acc))
    };

    // Epoch 0: state at entry.
    let t_eff0 = state.effective_transition();
    let loss0 = stage_loss.build(t_eff0.clone(), method.weight_detach)?;
    let risk0 = mean_loss(&model, &train.features, train_y, &loss0)?;
    let (val0, est0, acc0) = eval_epoch(&model, &t_eff0, &state)?;
    let mut records = vec![EpochRecord {
        epoch: 0,
        noisy_val_error: val0,
        train_risk: risk0,
        estimation_error: est0,
        clean_test_accuracy: acc0,
    }];
    let mut best_val = val0;
    let mut best_epoch = 0;
    let mut best_model = model.clone();
    let mut best_delta = state.delta_t.clone();

    let n_model_params = model.param_count();
    let mut flat = Vec::with_capacity(n_model_params + c * c);
    let mut flat_grads = Vec::with_capacity(n_model_params + c * c);

    for epoch in 1..=train_cfg.revision_epochs {
        let order = shuffle_indices(
            n,
            seeds::derive_indexed(seed, "revision-batches", epoch as u64),
        );
        let mut risk_sum = 0.0;
        for batch in order.chunks(train_cfg.batch_size) {
            let t_eff = state.effective_transition();
            let loss = stage_loss.build(t_eff, method.weight_detach)?;
            let grads = batch_grads(&model, &train.features, train_y, batch, &loss, true)
                .map_err(|e| stage_error(e, epoch))?;
            risk_sum += grads.loss * batch.len() as f64;

            flat.clear();
            model.flatten_into(&mut flat);
            flat.extend_from_slice(state.delta_t.as_slice());
            flat_grads.clear();
            grads.params.flatten_into(&mut flat_grads);
            let t_grad = grads
                .t_eff
                .as_ref()
                .expect("stage losses learn the transition");
            flat_grads.extend_from_slice(t_grad.as_slice());

            state.optimizer.step(&mut flat, &flat_grads)?;
            model.assign_from_flat(&flat[..n_model_params])?;
            state
                .delta_t
                .as_mut_slice()
                .copy_from_slice(&flat[n_model_params..]);

            if state.enforce_valid {
                let projected = project_to_valid(&state.effective_transition())
                    .map_err(|e| stage_error(e, epoch))?;
                let mut delta = projected.entries().clone();
                delta.scaled_add(state.t_hat.entries(), -1.0)?;
                state.delta_t = delta;
            }
        }
        let train_risk = risk_sum / n as f64;
        let t_eff = state.effective_transition();
        let (val_error, est, acc) = eval_epoch(&model, &t_eff, &state)?;
        records.push(EpochRecord {
            epoch,
            noisy_val_error: val_error,
            train_risk,
            estimation_error: est,
            clean_test_accuracy: acc,
        });
        if val_error < best_val {
            best_val = val_error;
            best_epoch = epoch;
            best_model = model.clone();
            best_delta = state.delta_t.clone();
        }
    }

    Ok(ReviseOutcome {
        model: best_model,
        delta_t: best_delta,
        history: TrainHistory {
            records,
            selected_epoch: best_epoch,
        },
        best_val_error: best_val,
    })
}

/// Clean accuracy of a model: argmax of the softmax against the given labels.
pub fn model_accuracy(model: &MlpModel, features: &Matrix, labels: &[usize]) -> Result<f64> {
    accuracy(model, features, labels)
}

fn stage_error(e: Error, epoch: usize) -> Error {
    match e {
        Error::Numeric(msg) => Error::Numeric(format!(
            "revision epoch {epoch} aborted: {msg}; the revised transition has degenerated \
             (enforce_valid would project it back)"
        )),
        other => other,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{MethodKind, TrainConfig};
    use crate::datasets::{
        generate_gaussian_mixture, split_train_val, GaussianMixtureSpec, PosteriorOracle,
    };
    use crate::estimation::OracleNoisySource;
    use crate::noise::{build_symmetric, corrupt_labels};

    fn method_cfg() -> MethodConfig {
        MethodConfig {
            kind: MethodKind::ReweightR,
            weight_detach: true,
            enforce_valid: false,
            anchors_per_class: 1,
        }
    }

    fn noisy_blobs(
        n: usize,
        rate: f64,
        seed: u64,
    ) -> (Dataset, Dataset, TransitionMatrix, GaussianMixtureSpec) {
        let means = Matrix::from_rows(&[vec![2.5, 0.0], vec![-2.5, 0.0]]).unwrap();
        let spec = GaussianMixtureSpec::uniform_priors(means, 1.0).unwrap();
        let ds = generate_gaussian_mixture(&spec, n, seed).unwrap();
        let t = build_symmetric(rate, 2).unwrap();
        let noisy = corrupt_labels(ds.clean_labels().unwrap(), &t, seed + 1).unwrap();
        let ds = ds.with_noisy_labels(noisy).unwrap();
        let (train, val) = split_train_val(&ds, 0.1, seed + 2).unwrap();
        (train, val, t, spec)
    }

    #[test]
    fn identity_transition_matches_plain_ce_training() {
        // With T = I the reweight loss is bitwise CE, so stage-2 init must
        // produce the exact same model as unweighted training.
        let (train, val, _, _) = noisy_blobs(200, 0.0, 1);
        let t_id = TransitionMatrix::identity(2).unwrap();
        let mut cfg = TrainConfig::default();
        cfg.stage2_init_epochs = 5;
        cfg.stage1_epochs = 5;
        cfg.batch_size = 32;
        let (m1, _, _) = stage2_initialize(
            &train,
            &val,
            &t_id,
            StageLoss::Reweight,
            &method_cfg(),
            &ModelConfig::default(),
            &cfg,
            3,
            None,
        )
        .unwrap();

        // Plain CE training with the same seeds: identical batches, identical
        // initialization, loss values bitwise equal => identical model.
        let model = MlpModel::random_init(
            &ModelConfig::default().dims(train.dim(), train.classes),
            Activation::Relu,
            true,
            seeds::derive(3, "stage2-init"),
        )
        .unwrap();
        let out = fit(
            model,
            &train.features,
            train.noisy_labels().unwrap(),
            &val.features,
            val.noisy_labels().unwrap(),
            &CorrectedLoss::unweighted(),
            ValPredictor::Adapted(t_id.entries()),
            &StageOpts {
                epochs: 5,
                batch_size: 32,
                optimizer: OptimizerHyper::sgd_momentum(cfg.stage2_init_lr, cfg.momentum, cfg.weight_decay),
                decay_epochs: vec![],
                decay_factor: cfg.lr_decay_factor,
                seed: seeds::derive(3, "stage2-init-batches"),
            },
            None,
        )
        .unwrap();
        assert_eq!(m1, out.model);
    }

    #[test]
    fn stage2_init_with_true_t_tracks_noise_floor() {
        let rate = 0.2;
        let (train, val, t, _) = noisy_blobs(1500, rate, 7);
        let mut cfg = TrainConfig::default();
        cfg.stage2_init_epochs = 25;
        cfg.stage2_init_lr = 0.05;
        cfg.batch_size = 64;
        let (_, _, best_val) = stage2_initialize(
            &train,
            &val,
            &t,
            StageLoss::Reweight,
            &method_cfg(),
            &ModelConfig::default(),
            &cfg,
            5,
            None,
        )
        .unwrap();
        // Noisy-val error of a good clean classifier sits near the flip rate.
        assert!(
            best_val < 2.0 * rate,
            "noisy val error {best_val} above twice the noise floor"
        );
    }

    #[test]
    fn zero_revision_epochs_is_a_no_op() {
        let (train, val, t, _) = noisy_blobs(120, 0.2, 11);
        let mut cfg = TrainConfig::default();
        cfg.stage2_init_epochs = 2;
        cfg.revision_epochs = 0;
        cfg.batch_size = 32;
        let (model, _, _) = stage2_initialize(
            &train,
            &val,
            &t,
            StageLoss::Reweight,
            &method_cfg(),
            &ModelConfig::default(),
            &cfg,
            2,
            None,
        )
        .unwrap();
        let state = RevisionState::new(
            t.clone(),
            &model,
            OptimizerHyper::adam(cfg.revision_lr),
            false,
        )
        .unwrap();
        let out = stage2_revise(
            &train,
            &val,
            model.clone(),
            state,
            StageLoss::Reweight,
            &method_cfg(),
            &cfg,
            2,
            Some(&t),
            None,
        )
        .unwrap();
        assert_eq!(out.delta_t.l1_norm(), 0.0);
        assert_eq!(out.model, model);
        assert_eq!(out.history.records.len(), 1);
        assert_eq!(out.history.selected_epoch, 0);
    }

    #[test]
    fn oracle_posteriors_with_true_t_are_near_stationary() {
        // Far-separated mixture: with the exact posterior as g and the true
        // transition, every sample's reweighted loss is ~0 and so is the
        // slack gradient.
        let means = Matrix::from_rows(&[vec![10.0, 0.0], vec![-10.0, 0.0]]).unwrap();
        let spec = GaussianMixtureSpec::uniform_priors(means, 0.5).unwrap();
        let ds = generate_gaussian_mixture(&spec, 400, 3).unwrap();
        let t = build_symmetric(0.3, 2).unwrap();
        let noisy = corrupt_labels(ds.clean_labels().unwrap(), &t, 4).unwrap();
        let source = OracleNoisySource {
            oracle: &spec,
            transition: &t,
        };
        let _ = &source;
        let loss = CorrectedLoss::reweight(t.entries().clone(), true).unwrap();
        let mut grad = Matrix::zeros(2, 2);
        for i in 0..ds.len() {
            let g = spec.clean_posterior(ds.instance(i));
            loss.accumulate_t_gradient(&g, noisy[i], 1.0 / ds.len() as f64, &mut grad)
                .unwrap();
        }
        assert!(
            grad.l1_norm() < 1e-6,
            "slack gradient at the truth has L1 {}",
            grad.l1_norm()
        );
    }

    #[test]
    fn enforce_valid_keeps_transition_row_stochastic() {
        let (train, val, t, _) = noisy_blobs(300, 0.3, 13);
        let mut cfg = TrainConfig::default();
        cfg.stage2_init_epochs = 3;
        cfg.revision_epochs = 4;
        cfg.revision_lr = 1e-3; // large on purpose so the slack moves
        cfg.batch_size = 32;
        let mut method = method_cfg();
        method.enforce_valid = true;
        let (model, _, _) = stage2_initialize(
            &train,
            &val,
            &t,
            StageLoss::Reweight,
            &method,
            &ModelConfig::default(),
            &cfg,
            4,
            None,
        )
        .unwrap();
        let state = RevisionState::new(
            t.clone(),
            &model,
            OptimizerHyper::adam(cfg.revision_lr),
            true,
        )
        .unwrap();
        let out = stage2_revise(
            &train,
            &val,
            model,
            state,
            StageLoss::Reweight,
            &method,
            &cfg,
            4,
            Some(&t),
            None,
        )
        .unwrap();
        let mut revised = t.entries().clone();
        revised.scaled_add(&out.delta_t, 1.0).unwrap();
        for i in 0..2 {
            let row = revised.row(i);
            assert!(row.iter().all(|&v| v >= 0.0));
            let sum: f64 = row.iter().sum();
            assert!((sum - 1.0).abs() < 1e-9, "row {i} sums to {sum}");
        }
        assert!(out.delta_t.l1_norm() > 0.0, "slack never moved");
    }

    #[test]
    fn history_selected_epoch_attains_min_val_error() {
        let (train, val, t, _) = noisy_blobs(300, 0.3, 17);
        let mut cfg = TrainConfig::default();
        cfg.stage2_init_epochs = 3;
        cfg.revision_epochs = 5;
        cfg.revision_lr = 1e-4;
        cfg.batch_size = 32;
        let (model, _, _) = stage2_initialize(
            &train,
            &val,
            &t,
            StageLoss::Reweight,
            &method_cfg(),
            &ModelConfig::default(),
            &cfg,
            6,
            None,
        )
        .unwrap();
        let state =
            RevisionState::new(t.clone(), &model, OptimizerHyper::adam(cfg.revision_lr), false)
                .unwrap();
        let out = stage2_revise(
            &train,
            &val,
            model,
            state,
            StageLoss::Reweight,
            &method_cfg(),
            &cfg,
            6,
            Some(&t),
            None,
        )
        .unwrap();
        let min = out
            .history
            .records
            .iter()
            .map(|r| r.noisy_val_error)
            .fold(f64::INFINITY, f64::min);
        let selected = &out.history.records[out.history.selected_epoch];
        assert_eq!(selected.noisy_val_error, min);
    }
}
