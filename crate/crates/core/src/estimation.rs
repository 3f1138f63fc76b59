//! Stage 1: learn the noisy class posterior with the unweighted loss, pick
//! pseudo-anchor points, and initialize the transition matrix from their
//! noisy posteriors.
//!
//! With a true anchor for class `i` (clean posterior one at `i`), the noisy
//! posterior at that point is exactly row `i` of the transition matrix; a
//! pseudo-anchor with clean posterior `l` yields the mixed row
//! `sum_k l_k T_k`, which is where the initialization error of
//! anchor-free data comes from.

use crate::config::{ModelConfig, TrainConfig};
use crate::correction::CorrectedLoss;
use crate::datasets::{Dataset, PosteriorOracle};
use crate::error::{Error, Result};
use crate::noise::{project_to_valid, TransitionMatrix};
use crate::numerics::{Activation, Matrix, MlpModel, OptimizerHyper};
use crate::seeds;
use crate::trainer::{fit, StageOpts, ValPredictor};

/// Anything that can report an estimated noisy class posterior at a point.
///
/// Trained models implement this; tests substitute the analytic oracle
/// composed with a known transition matrix.
pub trait NoisyPosteriorSource {
    fn num_classes(&self) -> usize;
    fn noisy_posterior(&self, x: &[f64]) -> Result<Vec<f64>>;
}

/// Stage-1 output: the network fit to noisy labels.
#[derive(Debug, Clone)]
pub struct PosteriorModel {
    pub model: MlpModel,
    pub trained_epochs: usize,
    pub best_val_error: f64,
}

impl NoisyPosteriorSource for PosteriorModel {
    fn num_classes(&self) -> usize {
        self.model.output_dim()
    }

    fn noisy_posterior(&self, x: &[f64]) -> Result<Vec<f64>> {
        let (_, g) = self.model.forward(x)?;
        Ok(g)
    }
}

/// Exact noisy posterior `T^T P(Y|x)` built from an analytic oracle; the
/// reference stage-1 stand-in for oracle-grade tests.
pub struct OracleNoisySource<'a> {
    pub oracle: &'a dyn PosteriorOracle,
    pub transition: &'a TransitionMatrix,
}

impl NoisyPosteriorSource for OracleNoisySource<'_> {
    fn num_classes(&self) -> usize {
        self.transition.num_classes()
    }

    fn noisy_posterior(&self, x: &[f64]) -> Result<Vec<f64>> {
        let clean = self.oracle.clean_posterior(x);
        self.transition.noisy_from_clean(&clean)
    }
}

/// Minimizes the unweighted cross-entropy on noisy training labels, keeping
/// the snapshot with the lowest classification error on the noisy validation
/// set.
pub fn train_noisy_posterior(
    train: &Dataset,
    val: &Dataset,
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    seed: u64,
) -> Result<PosteriorModel> {
    let train_y = train.noisy_labels()?;
    let val_y = val.noisy_labels()?;
    let model = MlpModel::random_init(
        &model_cfg.dims(train.dim(), train.classes),
        Activation::Relu,
        model_cfg.biases,
        seeds::derive(seed, "stage1-init"),
    )?;
    let opts = StageOpts {
        epochs: train_cfg.stage1_epochs,
        batch_size: train_cfg.batch_size,
        optimizer: OptimizerHyper::sgd_momentum(
            train_cfg.stage1_lr,
            train_cfg.momentum,
            train_cfg.weight_decay,
        ),
        decay_epochs: train_cfg.stage1_decay_epochs.clone(),
        decay_factor: train_cfg.lr_decay_factor,
        seed: seeds::derive(seed, "stage1-batches"),
    };
    let out = fit(
        model,
        &train.features,
        train_y,
        &val.features,
        val_y,
        &CorrectedLoss::unweighted(),
        ValPredictor::Softmax,
        &opts,
        None,
    )?;
    Ok(PosteriorModel {
        model: out.model,
        trained_epochs: train_cfg.stage1_epochs,
        best_val_error: out.best_val_error,
    })
}

/// Per-class pseudo-anchor selection.
#[derive(Debug, Clone)]
pub struct AnchorSet {
    /// `indices[i]` holds the k instances maximizing the estimated
    /// `P(noisy = i | x)`, best first; ties prefer the lower index.
    pub indices: Vec<Vec<usize>>,
    /// The winning posterior value per class.
    pub top_values: Vec<f64>,
}

/// Picks, for every class, the `k` instances with the highest estimated noisy
/// posterior for that class over the whole dataset.
pub fn select_pseudo_anchors(
    source: &dyn NoisyPosteriorSource,
    ds: &Dataset,
    k: usize,
) -> Result<AnchorSet> {
    if ds.is_empty() {
        return Err(Error::precondition("cannot select anchors from an empty dataset"));
    }
    if k == 0 {
        return Err(Error::domain("anchors per class must be at least 1"));
    }
    if k > ds.len() {
        return Err(Error::precondition(format!(
            "asked for {k} anchors per class but the dataset has {} instances",
            ds.len()
        )));
    }
    let c = source.num_classes();
    let mut posteriors = Matrix::zeros(ds.len(), c);
    for i in 0..ds.len() {
        let p = source.noisy_posterior(ds.instance(i))?;
        if p.len() != c {
            return Err(Error::shape("posterior length does not match class count"));
        }
        posteriors.row_mut(i).copy_from_slice(&p);
    }

    let mut indices = Vec::with_capacity(c);
    let mut top_values = Vec::with_capacity(c);
    for class in 0..c {
        let mut order: Vec<usize> = (0..ds.len()).collect();
        order.sort_by(|&a, &b| {
            posteriors
                .get(b, class)
                .partial_cmp(&posteriors.get(a, class))
                .expect("posteriors are finite")
                .then(a.cmp(&b))
        });
        order.truncate(k);
        top_values.push(posteriors.get(order[0], class));
        indices.push(order);
    }
    Ok(AnchorSet {
        indices,
        top_values,
    })
}

/// Row `i` of the initial estimate is the source's noisy posterior at the
/// class-`i` anchors (averaged over `k`), projected onto valid transition
/// matrices.
pub fn init_transition(
    source: &dyn NoisyPosteriorSource,
    ds: &Dataset,
    anchors: &AnchorSet,
) -> Result<TransitionMatrix> {
    let c = source.num_classes();
    if anchors.indices.len() != c {
        return Err(Error::shape(format!(
            "anchor set covers {} classes, source has {c}",
            anchors.indices.len()
        )));
    }
    let mut raw = Matrix::zeros(c, c);
    for (class, members) in anchors.indices.iter().enumerate() {
        if members.is_empty() {
            return Err(Error::precondition(format!(
                "class {class} has no anchors"
            )));
        }
        let row = raw.row_mut(class);
        for &i in members {
            let p = source.noisy_posterior(ds.instance(i))?;
            for (r, v) in row.iter_mut().zip(&p) {
                *r += v;
            }
        }
        let scale = 1.0 / members.len() as f64;
        for r in row.iter_mut() {
            *r *= scale;
        }
    }
    project_to_valid(&raw)
}
