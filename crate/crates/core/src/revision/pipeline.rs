//! End-to-end experiment execution for one seed: build data, corrupt labels,
//! run the chosen method, and emit the report artifacts.

use std::fmt::Write as _;
use std::path::Path;

use crate::config::{DataConfig, ExperimentConfig, MethodKind};
use crate::correction::CorrectedLoss;
use crate::datasets::{
    generate_gaussian_mixture, load_csv, load_idx, remove_top_posterior, split_train_val,
    Dataset, GaussianMixtureSpec,
};
use crate::error::{Error, Result};
use crate::estimation::{
    init_transition, select_pseudo_anchors, train_noisy_posterior, PosteriorModel,
};
use crate::noise::{estimation_error, raw_matrix_to_text, TransitionMatrix};
use crate::numerics::{Activation, Matrix, MlpModel, OptimizerHyper};
use crate::revision::history::TrainHistory;
use crate::revision::{stage2_initialize, stage2_revise, RevisionState, StageLoss};
use crate::seeds;
use crate::trainer::{fit, StageOpts, ValPredictor};

/// Everything one pipeline run produces.
#[derive(Debug)]
pub struct RunReport {
    pub method: MethodKind,
    pub seed: u64,
    /// Model selected by noisy-validation error.
    pub model: MlpModel,
    /// Initial transition estimate, absent for the unweighted baseline.
    pub t_hat: Option<TransitionMatrix>,
    /// `t_hat + delta_hat` (raw); equals `t_hat` for non-revising methods.
    pub t_revised: Option<Matrix>,
    pub history: TrainHistory,
    pub summary: RunSummary,
}

/// Flat, line-oriented summary; the aggregation command parses these back.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub method: String,
    pub seed: u64,
    pub selected_epoch: usize,
    pub noisy_val_error: f64,
    pub stage1_val_error: Option<f64>,
    pub clean_test_accuracy: Option<f64>,
    pub init_estimation_error: Option<f64>,
    pub final_estimation_error: Option<f64>,
}

impl RunSummary {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "method = {}", self.method);
        let _ = writeln!(out, "seed = {}", self.seed);
        let _ = writeln!(out, "selected_epoch = {}", self.selected_epoch);
        let _ = writeln!(out, "noisy_val_error = {}", self.noisy_val_error);
        if let Some(v) = self.stage1_val_error {
            let _ = writeln!(out, "stage1_val_error = {v}");
        }
        if let Some(v) = self.clean_test_accuracy {
            let _ = writeln!(out, "clean_test_accuracy = {v}");
        }
        if let Some(v) = self.init_estimation_error {
            let _ = writeln!(out, "init_estimation_error = {v}");
        }
        if let Some(v) = self.final_estimation_error {
            let _ = writeln!(out, "final_estimation_error = {v}");
        }
        out
    }

    pub fn from_text(text: &str, origin: impl AsRef<Path>) -> Result<Self> {
        let origin = origin.as_ref();
        let mut method = None;
        let mut seed = None;
        let mut selected_epoch = None;
        let mut noisy_val_error = None;
        let mut stage1_val_error = None;
        let mut clean_test_accuracy = None;
        let mut init_estimation_error = None;
        let mut final_estimation_error = None;
        for (no, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once(" = ").ok_or_else(|| {
                Error::format(origin, format!("line {}", no + 1), "expected `key = value`")
            })?;
            let bad = |what: &str| {
                Error::format(
                    origin,
                    format!("line {}", no + 1),
                    format!("bad {what} value {value:?}"),
                )
            };
            match key {
                "method" => method = Some(value.to_string()),
                "seed" => seed = Some(value.parse().map_err(|_| bad("seed"))?),
                "selected_epoch" => {
                    selected_epoch = Some(value.parse().map_err(|_| bad("epoch"))?)
                }
                "noisy_val_error" => {
                    noisy_val_error = Some(value.parse().map_err(|_| bad("float"))?)
                }
                "stage1_val_error" => {
                    stage1_val_error = Some(value.parse().map_err(|_| bad("float"))?)
                }
                "clean_test_accuracy" => {
                    clean_test_accuracy = Some(value.parse().map_err(|_| bad("float"))?)
                }
                "init_estimation_error" => {
                    init_estimation_error = Some(value.parse().map_err(|_| bad("float"))?)
                }
                "final_estimation_error" => {
                    final_estimation_error = Some(value.parse().map_err(|_| bad("float"))?)
                }
                _ => {
                    return Err(Error::format(
                        origin,
                        format!("line {}", no + 1),
                        format!("unknown key {key:?}"),
                    ))
                }
            }
        }
        Ok(RunSummary {
            method: method
                .ok_or_else(|| Error::format(origin, "end of file", "missing method"))?,
            seed: seed.ok_or_else(|| Error::format(origin, "end of file", "missing seed"))?,
            selected_epoch: selected_epoch
                .ok_or_else(|| Error::format(origin, "end of file", "missing selected_epoch"))?,
            noisy_val_error: noisy_val_error
                .ok_or_else(|| Error::format(origin, "end of file", "missing noisy_val_error"))?,
            stage1_val_error,
            clean_test_accuracy,
            init_estimation_error,
            final_estimation_error,
        })
    }
}

impl RunReport {
    /// Writes the report contract into `dir` (created if missing):
    /// `transition_init.txt`, `transition_revised.txt` (methods that estimate
    /// a transition), `history.csv`, `model.bin`, `summary.txt`.
    pub fn write_to_dir(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        if let Some(t_hat) = &self.t_hat {
            t_hat.save(dir.join("transition_init.txt"))?;
        }
        if let Some(t_rev) = &self.t_revised {
            std::fs::write(dir.join("transition_revised.txt"), raw_matrix_to_text(t_rev))?;
        }
        std::fs::write(dir.join("history.csv"), self.history.to_csv())?;
        self.model.save(dir.join("model.bin"))?;
        std::fs::write(dir.join("summary.txt"), self.summary.to_text())?;
        Ok(())
    }
}

/// Data for one run: corrupted train/val splits, an optional clean test set,
/// and the true transition when the run is a simulation.
#[derive(Debug)]
pub struct PreparedData {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Option<Dataset>,
    pub t_true: Option<TransitionMatrix>,
}

fn ring_means(classes: usize, dim: usize, separation: f64) -> Result<Matrix> {
    let mut means = Matrix::zeros(classes, dim);
    for i in 0..classes {
        let angle = 2.0 * std::f64::consts::PI * i as f64 / classes as f64;
        means.set(i, 0, separation * angle.cos());
        means.set(i, 1, separation * angle.sin());
    }
    Ok(means)
}

pub fn gaussian_spec_from_config(data: &DataConfig) -> Result<GaussianMixtureSpec> {
    let DataConfig::Gaussian {
        classes,
        dim,
        sigma,
        means,
        priors,
        separation,
        ..
    } = data
    else {
        return Err(Error::precondition("data source is not gaussian"));
    };
    let means = match means {
        Some(rows) => Matrix::from_rows(rows)?,
        None => ring_means(*classes, *dim, *separation)?,
    };
    match priors {
        Some(p) => GaussianMixtureSpec::new(means, *sigma, p.clone()),
        None => GaussianMixtureSpec::uniform_priors(means, *sigma),
    }
}

/// Loads or generates the clean data named by the config.
/// Returns (train, test, labels_already_noisy, t_true_from_sidecar).
fn source_data(
    cfg: &ExperimentConfig,
    seed: u64,
) -> Result<(Dataset, Option<Dataset>, bool, Option<TransitionMatrix>)> {
    match &cfg.data {
        DataConfig::Gaussian {
            train_n, test_n, ..
        } => {
            let spec = gaussian_spec_from_config(&cfg.data)?;
            let train =
                generate_gaussian_mixture(&spec, *train_n, seeds::derive(seed, "data-train"))?;
            let test = if *test_n > 0 {
                Some(generate_gaussian_mixture(
                    &spec,
                    *test_n,
                    seeds::derive(seed, "data-test"),
                )?)
            } else {
                None
            };
            Ok((train, test, false, None))
        }
        DataConfig::Csv {
            train,
            test,
            labels_are_noisy,
            true_transition,
        } => {
            let mut train_ds = load_csv(train)?;
            if *labels_are_noisy {
                let labels = train_ds.clean_labels()?.to_vec();
                train_ds.clean_labels = None;
                train_ds = train_ds.with_noisy_labels(labels)?;
            }
            let test_ds = test.as_ref().map(load_csv).transpose()?;
            let t_true = true_transition
                .as_ref()
                .map(TransitionMatrix::load)
                .transpose()?;
            Ok((train_ds, test_ds, *labels_are_noisy, t_true))
        }
        DataConfig::Idx {
            train_images,
            train_labels,
            test_images,
            test_labels,
        } => {
            let train_ds = load_idx(train_images, train_labels)?;
            let test_ds = match (test_images, test_labels) {
                (Some(i), Some(l)) => Some(load_idx(i, l)?),
                (None, None) => None,
                _ => {
                    return Err(Error::domain(
                        "idx test set needs both test_images and test_labels",
                    ))
                }
            };
            Ok((train_ds, test_ds, false, None))
        }
    }
}

/// Max-posterior score per instance for anchor removal: the oracle when the
/// dataset carries one, otherwise the softmax of a model trained on clean
/// labels with the stage-1 schedule.
fn anchor_scores(ds: &Dataset, cfg: &ExperimentConfig, seed: u64) -> Result<Vec<f64>> {
    if ds.oracle.is_some() {
        let post = ds.oracle_posteriors()?;
        return Ok((0..ds.len())
            .map(|i| post.row(i).iter().copied().fold(f64::MIN, f64::max))
            .collect());
    }
    let clean = ds.clean_labels()?;
    let model = MlpModel::random_init(
        &cfg.model.dims(ds.dim(), ds.classes),
        Activation::Relu,
        cfg.model.biases,
        seeds::derive(seed, "anchor-score-init"),
    )?;
    let opts = StageOpts {
        epochs: cfg.train.stage1_epochs,
        batch_size: cfg.train.batch_size,
        optimizer: OptimizerHyper::sgd_momentum(
            cfg.train.stage1_lr,
            cfg.train.momentum,
            cfg.train.weight_decay,
        ),
        decay_epochs: cfg.train.stage1_decay_epochs.clone(),
        decay_factor: cfg.train.lr_decay_factor,
        seed: seeds::derive(seed, "anchor-score-batches"),
    };
    let out = fit(
        model,
        &ds.features,
        clean,
        &ds.features,
        clean,
        &CorrectedLoss::unweighted(),
        ValPredictor::Softmax,
        &opts,
        None,
    )?;
    let mut scores = Vec::with_capacity(ds.len());
    for i in 0..ds.len() {
        let (_, g) = out.model.forward(ds.instance(i))?;
        scores.push(g.iter().copied().fold(f64::MIN, f64::max));
    }
    Ok(scores)
}

/// Source data after anchor removal and corruption, before the train/val
/// split: the corrupted full training set, the clean test set, and the true
/// transition when known.
pub fn prepare_corrupted(
    cfg: &ExperimentConfig,
    seed: u64,
) -> Result<(Dataset, Option<Dataset>, Option<TransitionMatrix>)> {
    let (mut train_full, test, labels_already_noisy, sidecar_t) = source_data(cfg, seed)?;

    if cfg.anchor_removal {
        let scores = anchor_scores(&train_full, cfg, seed)?;
        train_full = remove_top_posterior(&train_full, cfg.anchor_removal_fraction, &scores)?;
    }

    let mut t_true = sidecar_t;
    if !labels_already_noisy {
        let clean = train_full.clean_labels()?.to_vec();
        match cfg.noise.build()? {
            Some(t) => {
                if t.num_classes() != train_full.classes {
                    return Err(Error::domain(format!(
                        "noise matrix has {} classes, data has {}",
                        t.num_classes(),
                        train_full.classes
                    )));
                }
                let noisy =
                    crate::noise::corrupt_labels(&clean, &t, seeds::derive(seed, "corrupt"))?;
                train_full = train_full.with_noisy_labels(noisy)?;
                t_true = Some(t);
            }
            None => {
                train_full = train_full.with_noisy_labels(clean)?;
                t_true = Some(TransitionMatrix::identity(train_full.classes)?);
            }
        }
    }
    Ok((train_full, test, t_true))
}

/// Builds the corrupted train/val splits for one seed.
pub fn prepare_data(cfg: &ExperimentConfig, seed: u64) -> Result<PreparedData> {
    let (train_full, test, t_true) = prepare_corrupted(cfg, seed)?;
    let (train, val) = split_train_val(
        &train_full,
        cfg.train.val_fraction,
        seeds::derive(seed, "split"),
    )?;
    Ok(PreparedData {
        train,
        val,
        test,
        t_true,
    })
}

/// Runs stage 1 and returns the posterior model plus the initialized
/// transition estimate.
fn stage1(
    cfg: &ExperimentConfig,
    train: &Dataset,
    val: &Dataset,
    seed: u64,
) -> Result<(PosteriorModel, TransitionMatrix)> {
    let pm = train_noisy_posterior(train, val, &cfg.model, &cfg.train, seed)?;
    let anchors = select_pseudo_anchors(&pm, train, cfg.method.anchors_per_class)?;
    let t_hat = init_transition(&pm, train, &anchors)?;
    Ok((pm, t_hat))
}

/// Executes the full pipeline for one seed of the experiment: stage 1 where
/// the method needs a transition estimate, then either single-stage corrected
/// training or the two-stage revision, with model selection on the noisy
/// validation set throughout.
pub fn run_t_revision(cfg: &ExperimentConfig, seed: u64) -> Result<RunReport> {
    cfg.validate()?;
    let data = prepare_data(cfg, seed)?;
    let method = cfg.method.kind;

    let test_pair: Option<(&Matrix, &[usize])> = match &data.test {
        Some(t) => Some((&t.features, t.clean_labels()?)),
        None => None,
    };

    let main_opts = StageOpts {
        epochs: cfg.train.stage2_init_epochs,
        batch_size: cfg.train.batch_size,
        optimizer: OptimizerHyper::sgd_momentum(
            cfg.train.stage2_init_lr,
            cfg.train.momentum,
            cfg.train.weight_decay,
        ),
        decay_epochs: cfg.train.stage2_init_decay_epochs.clone(),
        decay_factor: cfg.train.lr_decay_factor,
        seed: seeds::derive(seed, "stage2-init-batches"),
    };
    let fresh_model = || {
        MlpModel::random_init(
            &cfg.model.dims(data.train.dim(), data.train.classes),
            Activation::Relu,
            cfg.model.biases,
            seeds::derive(seed, "stage2-init"),
        )
    };

    let (model, t_hat, t_revised, history, best_val, stage1_val) = match method {
        MethodKind::Unweighted => {
            let out = fit(
                fresh_model()?,
                &data.train.features,
                data.train.noisy_labels()?,
                &data.val.features,
                data.val.noisy_labels()?,
                &CorrectedLoss::unweighted(),
                ValPredictor::Softmax,
                &main_opts,
                test_pair,
            )?;
            let history = TrainHistory::from_stage(&out, None);
            (out.model, None, None, history, out.best_val_error, None)
        }
        MethodKind::Forward | MethodKind::Backward | MethodKind::Reweight => {
            let (pm, t_hat) = stage1(cfg, &data.train, &data.val, seed)?;
            let loss = match method {
                MethodKind::Forward => CorrectedLoss::forward(&t_hat),
                MethodKind::Backward => CorrectedLoss::backward(&t_hat)?,
                _ => CorrectedLoss::reweight(t_hat.entries().clone(), cfg.method.weight_detach)?,
            };
            let adapted = t_hat.entries().clone();
            let out = fit(
                fresh_model()?,
                &data.train.features,
                data.train.noisy_labels()?,
                &data.val.features,
                data.val.noisy_labels()?,
                &loss,
                ValPredictor::Adapted(&adapted),
                &main_opts,
                test_pair,
            )?;
            let est = data
                .t_true
                .as_ref()
                .map(|t| estimation_error(t, t_hat.entries(), None))
                .transpose()?;
            let history = TrainHistory::from_stage(&out, est);
            let revised = t_hat.entries().clone();
            (
                out.model,
                Some(t_hat),
                Some(revised),
                history,
                out.best_val_error,
                Some(pm.best_val_error),
            )
        }
        MethodKind::ForwardR | MethodKind::ReweightR => {
            let stage_loss = if method == MethodKind::ForwardR {
                StageLoss::Forward
            } else {
                StageLoss::Reweight
            };
            let (pm, t_hat) = stage1(cfg, &data.train, &data.val, seed)?;
            let (model, _, _) = stage2_initialize(
                &data.train,
                &data.val,
                &t_hat,
                stage_loss,
                &cfg.method,
                &cfg.model,
                &cfg.train,
                seed,
                test_pair,
            )?;
            let state = RevisionState::new(
                t_hat.clone(),
                &model,
                OptimizerHyper::adam(cfg.train.revision_lr),
                cfg.method.enforce_valid,
            )?;
            let out = stage2_revise(
                &data.train,
                &data.val,
                model,
                state,
                stage_loss,
                &cfg.method,
                &cfg.train,
                seed,
                data.t_true.as_ref(),
                test_pair,
            )?;
            let mut revised = t_hat.entries().clone();
            revised.scaled_add(&out.delta_t, 1.0)?;
            (
                out.model,
                Some(t_hat),
                Some(revised),
                out.history,
                out.best_val_error,
                Some(pm.best_val_error),
            )
        }
    };

    let clean_test_accuracy = match test_pair {
        Some((tx, ty)) => Some(crate::trainer::accuracy(&model, tx, ty)?),
        None => None,
    };
    let init_estimation_error = match (&data.t_true, &t_hat) {
        (Some(t), Some(th)) => Some(estimation_error(t, th.entries(), None)?),
        _ => None,
    };
    let final_estimation_error = match (&data.t_true, &t_revised) {
        (Some(t), Some(tr)) => Some(estimation_error(t, tr, None)?),
        _ => None,
    };

    let summary = RunSummary {
        method: method.name().to_string(),
        seed,
        selected_epoch: history.selected_epoch,
        noisy_val_error: best_val,
        stage1_val_error: stage1_val,
        clean_test_accuracy,
        init_estimation_error,
        final_estimation_error,
    };

    Ok(RunReport {
        method,
        seed,
        model,
        t_hat,
        t_revised,
        history,
        summary,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{MethodConfig, ModelConfig, TrainConfig, SCHEMA_VERSION};
    use crate::noise::NoiseSpec;

    fn toy_config(method: MethodKind) -> ExperimentConfig {
        ExperimentConfig {
            schema_version: SCHEMA_VERSION,
            seeds: vec![1],
            output_dir: "unused".into(),
            anchor_removal: false,
            anchor_removal_fraction: 0.2,
            data: DataConfig::Gaussian {
                classes: 2,
                dim: 2,
                sigma: 0.8,
                train_n: 20,
                test_n: 10,
                means: None,
                priors: None,
                separation: 3.0,
            },
            noise: NoiseSpec::Symmetric {
                rate: 0.2,
                classes: 2,
            },
            method: MethodConfig {
                kind: method,
                weight_detach: true,
                enforce_valid: false,
                anchors_per_class: 1,
            },
            model: ModelConfig {
                hidden: vec![4],
                biases: true,
            },
            train: TrainConfig {
                stage1_epochs: 2,
                stage2_init_epochs: 2,
                revision_epochs: 2,
                batch_size: 8,
                revision_lr: 1e-4,
                ..TrainConfig::default()
            },
        }
    }

    #[test]
    fn twenty_sample_smoke_emits_all_outputs() {
        let cfg = toy_config(MethodKind::ReweightR);
        let report = run_t_revision(&cfg, 1).unwrap();
        assert!(report.t_hat.is_some());
        assert!(report.t_revised.is_some());
        assert!(report.summary.clean_test_accuracy.is_some());
        assert!(report.summary.init_estimation_error.is_some());
        assert!(!report.history.records.is_empty());

        let dir = tempfile::tempdir().unwrap();
        report.write_to_dir(dir.path()).unwrap();
        for file in [
            "transition_init.txt",
            "transition_revised.txt",
            "history.csv",
            "model.bin",
            "summary.txt",
        ] {
            assert!(dir.path().join(file).exists(), "{file} missing");
        }
        let text = std::fs::read_to_string(dir.path().join("summary.txt")).unwrap();
        let parsed = RunSummary::from_text(&text, "summary.txt").unwrap();
        assert_eq!(parsed, report.summary);
    }

    #[test]
    fn identical_seeds_give_identical_reports() {
        let cfg = toy_config(MethodKind::ReweightR);
        let a = run_t_revision(&cfg, 7).unwrap();
        let b = run_t_revision(&cfg, 7).unwrap();
        assert_eq!(a.history.to_csv(), b.history.to_csv());
        assert_eq!(a.summary, b.summary);
        assert_eq!(a.model, b.model);
    }

    #[test]
    fn every_method_kind_runs() {
        for method in [
            MethodKind::Unweighted,
            MethodKind::Forward,
            MethodKind::Backward,
            MethodKind::Reweight,
            MethodKind::ForwardR,
            MethodKind::ReweightR,
        ] {
            let cfg = toy_config(method);
            let report = run_t_revision(&cfg, 3).unwrap();
            assert_eq!(report.method, method);
            if method.uses_transition() {
                assert!(report.t_hat.is_some());
            } else {
                assert!(report.t_hat.is_none());
            }
        }
    }

    #[test]
    fn summary_text_round_trips() {
        let s = RunSummary {
            method: "forward-r".into(),
            seed: 42,
            selected_epoch: 7,
            noisy_val_error: 0.25,
            stage1_val_error: Some(0.3),
            clean_test_accuracy: None,
            init_estimation_error: Some(0.15),
            final_estimation_error: Some(0.1),
        };
        let parsed = RunSummary::from_text(&s.to_text(), "mem").unwrap();
        assert_eq!(parsed, s);
    }
}
