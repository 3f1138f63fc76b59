//! Declarative experiment descriptions.
//!
//! A config names one data source, a noise spec, a method, a network shape,
//! and the optimizer schedules for every training stage. The CLI reads these
//! from TOML; defaults are desk-scale.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::noise::NoiseSpec;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    /// One full pipeline run per seed.
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    /// Remove likely anchor points (top clean-posterior instances) from the
    /// training data before corruption.
    #[serde(default)]
    pub anchor_removal: bool,
    /// Per-class fraction dropped when `anchor_removal` is on.
    #[serde(default = "default_anchor_fraction")]
    pub anchor_removal_fraction: f64,
    pub data: DataConfig,
    pub noise: NoiseSpec,
    pub method: MethodConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
}

fn default_anchor_fraction() -> f64 {
    0.2
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::domain(format!(
                "unsupported schema_version {}, this build reads {SCHEMA_VERSION}",
                self.schema_version
            )));
        }
        if self.seeds.is_empty() {
            return Err(Error::domain("seeds must name at least one seed"));
        }
        if !(0.0..1.0).contains(&self.anchor_removal_fraction) {
            return Err(Error::domain(
                "anchor_removal_fraction must lie in [0, 1)",
            ));
        }
        if self.method.anchors_per_class == 0 {
            return Err(Error::domain("anchors_per_class must be at least 1"));
        }
        self.data.validate()?;
        self.model.validate()?;
        self.train.validate()?;
        Ok(())
    }
}

/// Exactly one data source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "lowercase", deny_unknown_fields)]
pub enum DataConfig {
    /// Synthetic isotropic Gaussian mixture with an exact posterior oracle.
    Gaussian {
        classes: usize,
        dim: usize,
        sigma: f64,
        train_n: usize,
        test_n: usize,
        /// Component means, one row per class. When absent the classes sit on
        /// a ring of radius `separation` in the first two feature dimensions.
        #[serde(default)]
        means: Option<Vec<Vec<f64>>>,
        #[serde(default)]
        priors: Option<Vec<f64>>,
        #[serde(default = "default_separation")]
        separation: f64,
    },
    /// CSV files (`label,f1,...,fd`).
    Csv {
        train: PathBuf,
        #[serde(default)]
        test: Option<PathBuf>,
        /// When set, the training labels are already noisy and no corruption
        /// is applied.
        #[serde(default)]
        labels_are_noisy: bool,
        /// True transition matrix sidecar, enables estimation-error tracking.
        #[serde(default)]
        true_transition: Option<PathBuf>,
    },
    /// IDX image/label pairs (the MNIST container format).
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        #[serde(default)]
        test_images: Option<PathBuf>,
        #[serde(default)]
        test_labels: Option<PathBuf>,
    },
}

fn default_separation() -> f64 {
    3.0
}

impl DataConfig {
    pub fn validate(&self) -> Result<()> {
        match self {
            DataConfig::Gaussian {
                classes,
                dim,
                sigma,
                train_n,
                means,
                priors,
                separation,
                ..
            } => {
                if *classes < 2 {
                    return Err(Error::domain("gaussian data needs at least 2 classes"));
                }
                if *dim == 0 {
                    return Err(Error::domain("gaussian dim must be positive"));
                }
                if means.is_none() && *dim < 2 {
                    return Err(Error::domain(
                        "default ring means need dim >= 2; give explicit means for dim 1",
                    ));
                }
                if !(*sigma > 0.0) {
                    return Err(Error::domain("sigma must be positive"));
                }
                if *train_n == 0 {
                    return Err(Error::domain("train_n must be positive"));
                }
                if let Some(m) = means {
                    if m.len() != *classes || m.iter().any(|row| row.len() != *dim) {
                        return Err(Error::shape(
                            "means must be classes rows of dim entries each",
                        ));
                    }
                }
                if let Some(p) = priors {
                    if p.len() != *classes {
                        return Err(Error::shape("priors must have one entry per class"));
                    }
                }
                if !(*separation > 0.0) {
                    return Err(Error::domain("separation must be positive"));
                }
                Ok(())
            }
            DataConfig::Csv { .. } | DataConfig::Idx { .. } => Ok(()),
        }
    }

    pub fn true_transition(&self) -> Option<&PathBuf> {
        match self {
            DataConfig::Csv {
                true_transition, ..
            } => true_transition.as_ref(),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MethodKind {
    #[serde(rename = "unweighted")]
    Unweighted,
    #[serde(rename = "forward")]
    Forward,
    #[serde(rename = "backward")]
    Backward,
    #[serde(rename = "reweight")]
    Reweight,
    #[serde(rename = "forward-r")]
    ForwardR,
    #[serde(rename = "reweight-r")]
    ReweightR,
}

impl MethodKind {
    pub fn name(self) -> &'static str {
        match self {
            MethodKind::Unweighted => "unweighted",
            MethodKind::Forward => "forward",
            MethodKind::Backward => "backward",
            MethodKind::Reweight => "reweight",
            MethodKind::ForwardR => "forward-r",
            MethodKind::ReweightR => "reweight-r",
        }
    }

    /// Whether the method estimates a transition matrix at all.
    pub fn uses_transition(self) -> bool {
        !matches!(self, MethodKind::Unweighted)
    }

    /// Whether stage 2 learns a slack on top of the initial estimate.
    pub fn revises(self) -> bool {
        matches!(self, MethodKind::ForwardR | MethodKind::ReweightR)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodConfig {
    pub kind: MethodKind,
    /// Treat the importance weight as a constant for parameter gradients.
    #[serde(default = "default_true")]
    pub weight_detach: bool,
    /// Project `T_hat + delta_T` back onto valid transition matrices after
    /// every update. Off by default.
    #[serde(default)]
    pub enforce_valid: bool,
    /// Pseudo-anchors averaged per class when initializing the transition.
    #[serde(default = "default_one")]
    pub anchors_per_class: usize,
}

fn default_true() -> bool {
    true
}

fn default_one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Hidden layer widths; empty for a linear softmax model.
    pub hidden: Vec<usize>,
    pub biases: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            hidden: vec![32],
            biases: true,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden.iter().any(|&h| h == 0) {
            return Err(Error::domain("hidden layer widths must be positive"));
        }
        Ok(())
    }

    pub fn dims(&self, input_dim: usize, classes: usize) -> Vec<usize> {
        let mut dims = Vec::with_capacity(self.hidden.len() + 2);
        dims.push(input_dim);
        dims.extend_from_slice(&self.hidden);
        dims.push(classes);
        dims
    }
}

/// Optimizer schedules for the three training stages.
///
/// Stage 1 and the stage-2 initialization run SGD with momentum, weight
/// decay, and an optional step decay; the revision phase runs Adam.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub stage1_epochs: usize,
    pub stage1_lr: f64,
    /// Learning rate is multiplied by `lr_decay_factor` after each listed
    /// (1-based) epoch.
    pub stage1_decay_epochs: Vec<usize>,
    pub stage2_init_epochs: usize,
    pub stage2_init_lr: f64,
    pub stage2_init_decay_epochs: Vec<usize>,
    pub revision_epochs: usize,
    pub revision_lr: f64,
    pub batch_size: usize,
    pub val_fraction: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub lr_decay_factor: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            stage1_epochs: 30,
            stage1_lr: 1e-2,
            stage1_decay_epochs: Vec::new(),
            stage2_init_epochs: 30,
            stage2_init_lr: 1e-2,
            stage2_init_decay_epochs: Vec::new(),
            revision_epochs: 30,
            revision_lr: 5e-7,
            batch_size: 128,
            val_fraction: 0.1,
            momentum: 0.9,
            weight_decay: 1e-4,
            lr_decay_factor: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.stage1_lr > 0.0 && self.stage2_init_lr > 0.0 && self.revision_lr > 0.0) {
            return Err(Error::domain("learning rates must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::domain("batch_size must be positive"));
        }
        if !(0.0 < self.val_fraction && self.val_fraction < 1.0) {
            return Err(Error::domain("val_fraction must lie in (0, 1)"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::domain("momentum must lie in [0, 1)"));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::domain("weight_decay must be nonnegative"));
        }
        if !(0.0 < self.lr_decay_factor && self.lr_decay_factor <= 1.0) {
            return Err(Error::domain("lr_decay_factor must lie in (0, 1]"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config() -> ExperimentConfig {
        ExperimentConfig {
            schema_version: SCHEMA_VERSION,
            seeds: vec![1, 2],
            output_dir: PathBuf::from("runs/demo"),
            anchor_removal: false,
            anchor_removal_fraction: 0.2,
            data: DataConfig::Gaussian {
                classes: 3,
                dim: 2,
                sigma: 1.0,
                train_n: 100,
                test_n: 50,
                means: None,
                priors: None,
                separation: 3.0,
            },
            noise: NoiseSpec::Symmetric {
                rate: 0.3,
                classes: 3,
            },
            method: MethodConfig {
                kind: MethodKind::ReweightR,
                weight_detach: true,
                enforce_valid: false,
                anchors_per_class: 1,
            },
            model: ModelConfig::default(),
            train: TrainConfig::default(),
        }
    }

    #[test]
    fn validates_a_sane_config() {
        tiny_config().validate().unwrap();
    }

    #[test]
    fn rejects_empty_seeds_and_bad_fraction() {
        let mut cfg = tiny_config();
        cfg.seeds.clear();
        assert!(cfg.validate().is_err());
        let mut cfg = tiny_config();
        cfg.anchor_removal_fraction = 1.0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn rejects_unknown_schema_version() {
        let mut cfg = tiny_config();
        cfg.schema_version = 99;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn method_kind_names_are_stable() {
        assert_eq!(MethodKind::ReweightR.name(), "reweight-r");
        assert!(MethodKind::ReweightR.revises());
        assert!(!MethodKind::Reweight.revises());
        assert!(!MethodKind::Unweighted.uses_transition());
    }
}
