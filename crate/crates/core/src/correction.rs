//! Consistent loss corrections for class-dependent label noise.
//!
//! Four per-sample losses over the softmax output `g` and an observed noisy
//! label `y`:
//!
//! - unweighted:  `-log g_y`
//! - forward:     `-log (T^T g)_y`
//! - backward:    component `y` of `(T^T)^{-1} [ -log g_1, ..., -log g_C ]`
//! - reweight:    `w * (-log g_y)` with `w = g_y / (T^T g)_y`
//!
//! All four coincide bit for bit when `T` is the identity. The reweight loss
//! is the inverse-free risk-consistent estimator this crate revolves around;
//! its transition argument may be a raw `T_hat + delta_T` sum, and its
//! gradient with respect to that sum flows through the weight denominator.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::noise::TransitionMatrix;
use crate::numerics::{solve_linear, Matrix, MlpModel, ModelGrads, EPS_LOG};

/// Reweight denominators at or below this signal a near-invalid transition.
pub const EPS_DEN: f64 = 1e-12;

/// Samples per rayon task in batch gradient accumulation. Fixed so that the
/// reduction order (and therefore every bit of the result) does not depend on
/// how many worker threads happen to run.
const GRAD_CHUNK: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    Unweighted,
    Forward,
    Backward,
    Reweight,
}

/// Per-sample loss value plus the importance weight that scaled it
/// (1 for the non-reweighted losses).
#[derive(Debug, Clone, Copy)]
pub struct SampleLoss {
    pub loss: f64,
    pub weight: f64,
}

/// A corrected loss bound to its transition matrix.
///
/// `weight_detach` controls whether parameter gradients of the reweight loss
/// flow through the importance weight (`false`) or treat it as a per-sample
/// constant (`true`, the default used by training). Gradients with respect to
/// the transition itself always flow through the weight — it appears nowhere
/// else.
#[derive(Debug, Clone)]
pub struct CorrectedLoss {
    kind: LossKind,
    t_eff: Option<Matrix>,
    /// Rows of `(T^T)^{-1}`, backward only.
    inv_t_top: Option<Matrix>,
    weight_detach: bool,
}

impl CorrectedLoss {
    pub fn unweighted() -> Self {
        CorrectedLoss {
            kind: LossKind::Unweighted,
            t_eff: None,
            inv_t_top: None,
            weight_detach: true,
        }
    }

    pub fn forward(t: &TransitionMatrix) -> Self {
        CorrectedLoss::forward_raw(t.entries().clone())
    }

    /// Forward loss over a raw adaptation matrix, used while a revision phase
    /// is tuning `t_hat + delta_t` and the sum is not yet a valid transition.
    pub fn forward_raw(t_eff: Matrix) -> Self {
        CorrectedLoss {
            kind: LossKind::Forward,
            t_eff: Some(t_eff),
            inv_t_top: None,
            weight_detach: true,
        }
    }

    /// Precomputes `(T^T)^{-1}`; fails if `T` is too close to singular.
    pub fn backward(t: &TransitionMatrix) -> Result<Self> {
        let c = t.num_classes();
        let t_top = t.entries().transpose();
        let mut inv = Matrix::zeros(c, c);
        for j in 0..c {
            let mut unit = vec![0.0; c];
            unit[j] = 1.0;
            let col = solve_linear(&t_top, &unit)?;
            for i in 0..c {
                inv.set(i, j, col[i]);
            }
        }
        Ok(CorrectedLoss {
            kind: LossKind::Backward,
            t_eff: Some(t.entries().clone()),
            inv_t_top: Some(inv),
            weight_detach: true,
        })
    }

    /// `t_eff` may be any raw square matrix (typically `T_hat + delta_T`).
    pub fn reweight(t_eff: Matrix, weight_detach: bool) -> Result<Self> {
        if t_eff.rows() != t_eff.cols() {
            return Err(Error::shape(format!(
                "reweight transition must be square, got {}x{}",
                t_eff.rows(),
                t_eff.cols()
            )));
        }
        Ok(CorrectedLoss {
            kind: LossKind::Reweight,
            t_eff: Some(t_eff),
            inv_t_top: None,
            weight_detach,
        })
    }

    pub fn kind(&self) -> LossKind {
        self.kind
    }

    pub fn t_eff(&self) -> Option<&Matrix> {
        self.t_eff.as_ref()
    }

    /// Whether this loss has a transition gradient to learn.
    pub fn learns_transition(&self) -> bool {
        matches!(self.kind, LossKind::Reweight | LossKind::Forward) && self.t_eff.is_some()
    }

    fn classes(&self, g: &[f64]) -> Result<usize> {
        let c = g.len();
        if let Some(t) = &self.t_eff {
            if t.rows() != c {
                return Err(Error::shape(format!(
                    "softmax of {c} classes against {}x{} transition",
                    t.rows(),
                    t.cols()
                )));
            }
        }
        Ok(c)
    }

    /// Loss (and weight) of one sample.
    pub fn sample_loss(&self, g: &[f64], y: usize) -> Result<SampleLoss> {
        let c = self.classes(g)?;
        if y >= c {
            return Err(Error::domain(format!(
                "label {y} out of range for {c} classes"
            )));
        }
        match self.kind {
            LossKind::Unweighted => Ok(SampleLoss {
                loss: -g[y].max(EPS_LOG).ln(),
                weight: 1.0,
            }),
            LossKind::Forward => {
                let t = self.t_eff.as_ref().expect("forward carries a transition");
                let q = t.transposed_matvec(g)?;
                Ok(SampleLoss {
                    loss: -q[y].max(EPS_LOG).ln(),
                    weight: 1.0,
                })
            }
            LossKind::Backward => {
                let inv = self.inv_t_top.as_ref().expect("backward precomputes the inverse");
                let loss = (0..c)
                    .map(|k| inv.get(y, k) * -g[k].max(EPS_LOG).ln())
                    .sum();
                Ok(SampleLoss { loss, weight: 1.0 })
            }
            LossKind::Reweight => {
                let t = self.t_eff.as_ref().expect("reweight carries a transition");
                let denom = (0..c).map(|i| t.get(i, y) * g[i]).sum::<f64>();
                if denom <= EPS_DEN {
                    return Err(Error::numeric(format!(
                        "reweight denominator {denom:e} at label {y}: transition is near-invalid"
                    )));
                }
                let weight = g[y] / denom;
                Ok(SampleLoss {
                    loss: weight * -g[y].max(EPS_LOG).ln(),
                    weight,
                })
            }
        }
    }

    /// Loss and its gradient with respect to the logits.
    ///
    /// The gradient goes through the softmax Jacobian:
    /// `dL/dh_k = g_k (A_k - sum_m A_m g_m)` where `A = dL/dg`. Clamped
    /// `-log` branches contribute a zero `A` term, so the result always
    /// matches finite differences of the actual loss.
    pub fn logit_gradient(&self, g: &[f64], y: usize) -> Result<(SampleLoss, Vec<f64>)> {
        let c = self.classes(g)?;
        let value = self.sample_loss(g, y)?;
        let mut dg = vec![0.0; c];
        match self.kind {
            LossKind::Unweighted => {
                if g[y] > EPS_LOG {
                    dg[y] = -1.0 / g[y];
                }
            }
            LossKind::Forward => {
                let t = self.t_eff.as_ref().expect("forward carries a transition");
                let q_y = (0..c).map(|i| t.get(i, y) * g[i]).sum::<f64>();
                if q_y > EPS_LOG {
                    for (m, d) in dg.iter_mut().enumerate() {
                        *d = -t.get(m, y) / q_y;
                    }
                }
            }
            LossKind::Backward => {
                let inv = self.inv_t_top.as_ref().expect("backward precomputes the inverse");
                for (k, d) in dg.iter_mut().enumerate() {
                    if g[k] > EPS_LOG {
                        *d = -inv.get(y, k) / g[k];
                    }
                }
            }
            LossKind::Reweight => {
                let t = self.t_eff.as_ref().expect("reweight carries a transition");
                let denom = (0..c).map(|i| t.get(i, y) * g[i]).sum::<f64>();
                let w = value.weight;
                let ce = if g[y] > EPS_LOG { -g[y].ln() } else { -EPS_LOG.ln() };
                if self.weight_detach {
                    if g[y] > EPS_LOG {
                        dg[y] = -w / g[y];
                    }
                } else {
                    // d(w * ce)/dg_m = ce * dw/dg_m + w * dce/dg_m.
                    for (m, d) in dg.iter_mut().enumerate() {
                        let dw =
                            ((if m == y { 1.0 } else { 0.0 }) - w * t.get(m, y)) / denom;
                        *d = ce * dw;
                    }
                    if g[y] > EPS_LOG {
                        dg[y] += -w / g[y];
                    }
                }
            }
        }
        let dot: f64 = dg.iter().zip(g).map(|(a, b)| a * b).sum();
        let dlogits = g
            .iter()
            .zip(&dg)
            .map(|(&gk, &ak)| gk * (ak - dot))
            .collect();
        Ok((value, dlogits))
    }

    /// Gradient of one sample's loss with respect to the effective transition,
    /// accumulated into `out` with factor `scale`. Only column `y` is touched:
    ///
    /// - reweight: `d/dT[i][y] (w * ce) = -w * ce * g_i / denom`
    /// - forward:  `d/dT[i][y] (-log q_y) = -g_i / q_y`
    pub fn accumulate_t_gradient(
        &self,
        g: &[f64],
        y: usize,
        scale: f64,
        out: &mut Matrix,
    ) -> Result<()> {
        let c = self.classes(g)?;
        if out.rows() != c || out.cols() != c {
            return Err(Error::shape("transition gradient buffer has wrong shape"));
        }
        match self.kind {
            LossKind::Reweight => {
                let t = self.t_eff.as_ref().expect("reweight carries a transition");
                let denom = (0..c).map(|i| t.get(i, y) * g[i]).sum::<f64>();
                if denom <= EPS_DEN {
                    return Err(Error::numeric(format!(
                        "reweight denominator {denom:e} at label {y}"
                    )));
                }
                let w = g[y] / denom;
                let ce = -g[y].max(EPS_LOG).ln();
                let factor = -w * ce / denom * scale;
                for i in 0..c {
                    let cur = out.get(i, y);
                    out.set(i, y, g[i].mul_add(factor, cur));
                }
            }
            LossKind::Forward => {
                let t = self.t_eff.as_ref().expect("forward carries a transition");
                let q_y = (0..c).map(|i| t.get(i, y) * g[i]).sum::<f64>();
                if q_y > EPS_LOG {
                    let factor = -scale / q_y;
                    for i in 0..c {
                        let cur = out.get(i, y);
                        out.set(i, y, g[i].mul_add(factor, cur));
                    }
                }
            }
            LossKind::Unweighted | LossKind::Backward => {
                return Err(Error::precondition(
                    "this loss has no transition gradient",
                ));
            }
        }
        Ok(())
    }
}

/// Spec-level convenience: reweight loss and weight for one sample.
pub fn reweight_loss(g: &[f64], y: usize, t_eff: &Matrix) -> Result<(f64, f64)> {
    let loss = CorrectedLoss::reweight(t_eff.clone(), true)?;
    let v = loss.sample_loss(g, y)?;
    Ok((v.loss, v.weight))
}

/// Forward-corrected loss for one sample.
pub fn forward_loss(g: &[f64], y: usize, t: &TransitionMatrix) -> Result<f64> {
    Ok(CorrectedLoss::forward(t).sample_loss(g, y)?.loss)
}

/// Backward-corrected loss from an explicit per-class loss vector:
/// component `y` of `(T^T)^{-1} L`. May legitimately be negative.
pub fn backward_loss(per_class: &[f64], y: usize, t: &TransitionMatrix) -> Result<f64> {
    let c = t.num_classes();
    if per_class.len() != c {
        return Err(Error::shape(format!(
            "per-class loss vector of length {} for {c} classes",
            per_class.len()
        )));
    }
    if y >= c {
        return Err(Error::domain(format!("label {y} out of range")));
    }
    let corrected = solve_linear(&t.entries().transpose(), per_class)?;
    Ok(corrected[y])
}

/// Mean loss and gradients over a batch of instances.
#[derive(Debug)]
pub struct BatchGrads {
    /// Mean loss over the batch.
    pub loss: f64,
    /// Mean parameter gradients.
    pub params: ModelGrads,
    /// Mean gradient on the effective transition, when the loss learns one.
    pub t_eff: Option<Matrix>,
}

/// Computes mean loss and gradients of `loss` over `batch` (indices into
/// `features`/`labels` rows).
///
/// Samples are processed in fixed-size chunks that are reduced in index
/// order, so the result is bit-identical regardless of thread count.
pub fn batch_grads(
    model: &MlpModel,
    features: &Matrix,
    labels: &[usize],
    batch: &[usize],
    loss: &CorrectedLoss,
    want_t_grad: bool,
) -> Result<BatchGrads> {
    if batch.is_empty() {
        return Err(Error::precondition("empty batch"));
    }
    if labels.len() != features.rows() {
        return Err(Error::shape("label count does not match feature rows"));
    }
    let c = model.output_dim();
    let want_t = want_t_grad && loss.learns_transition();

    let partials: Vec<Result<(f64, ModelGrads, Option<Matrix>)>> = batch
        .par_chunks(GRAD_CHUNK)
        .map(|chunk| {
            let mut sum_loss = 0.0;
            let mut grads = ModelGrads::zeros_like(model);
            let mut t_grad = want_t.then(|| Matrix::zeros(c, c));
            for &i in chunk {
                let trace = model.forward_trace(features.row(i))?;
                let (value, dlogits) = loss.logit_gradient(&trace.softmax, labels[i])?;
                sum_loss += value.loss;
                let sample = model.backward(&trace, &dlogits)?;
                grads.scaled_add(&sample, 1.0)?;
                if let Some(tg) = &mut t_grad {
                    loss.accumulate_t_gradient(&trace.softmax, labels[i], 1.0, tg)?;
                }
            }
            Ok((sum_loss, grads, t_grad))
        })
        .collect();

    let scale = 1.0 / batch.len() as f64;
    let mut total_loss = 0.0;
    let mut params = ModelGrads::zeros_like(model);
    let mut t_eff = want_t.then(|| Matrix::zeros(c, c));
    for partial in partials {
        let (l, g, tg) = partial?;
        total_loss += l;
        params.scaled_add(&g, scale)?;
        if let (Some(acc), Some(tg)) = (&mut t_eff, tg) {
            acc.scaled_add(&tg, scale)?;
        }
    }
    let loss_mean = total_loss * scale;
    if !loss_mean.is_finite() {
        return Err(Error::numeric(format!("batch loss is {loss_mean}")));
    }
    Ok(BatchGrads {
        loss: loss_mean,
        params,
        t_eff,
    })
}

/// Mean reweight loss and gradients for parameters and the transition slack.
///
/// The effective transition is `t_hat + delta_t`; the returned transition
/// gradient applies to `delta_t` (equivalently to the sum — the slack enters
/// additively).
pub fn reweight_grads(
    model: &MlpModel,
    features: &Matrix,
    labels: &[usize],
    batch: &[usize],
    t_hat: &Matrix,
    delta_t: &Matrix,
    weight_detach: bool,
) -> Result<BatchGrads> {
    let mut t_eff = t_hat.clone();
    t_eff.scaled_add(delta_t, 1.0)?;
    let loss = CorrectedLoss::reweight(t_eff, weight_detach)?;
    batch_grads(model, features, labels, batch, &loss, true)
}

/// Mean loss of `loss` over every instance, no gradients.
pub fn mean_loss(
    model: &MlpModel,
    features: &Matrix,
    labels: &[usize],
    loss: &CorrectedLoss,
) -> Result<f64> {
    if features.rows() == 0 {
        return Err(Error::precondition("empty dataset"));
    }
    let totals: Vec<Result<f64>> = (0..features.rows())
        .collect::<Vec<_>>()
        .par_chunks(GRAD_CHUNK)
        .map(|chunk| {
            let mut acc = 0.0;
            for &i in chunk {
                let (_, g) = model.forward(features.row(i))?;
                acc += loss.sample_loss(&g, labels[i])?.loss;
            }
            Ok(acc)
        })
        .collect();
    let mut total = 0.0;
    for t in totals {
        total += t?;
    }
    Ok(total / features.rows() as f64)
}
