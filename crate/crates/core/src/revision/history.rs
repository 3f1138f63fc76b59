//! Per-epoch training history and its CSV form.

use std::path::Path;

use crate::error::{Error, Result};
use crate::trainer::FitOutcome;

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub noisy_val_error: f64,
    /// Mean training loss of the epoch (running mean across its batches; for
    /// epoch 0 the loss of the entry state).
    pub train_risk: f64,
    /// Present when the true transition matrix is known.
    pub estimation_error: Option<f64>,
    /// Present when a clean test set is attached.
    pub clean_test_accuracy: Option<f64>,
}

/// Epoch-indexed metric history. Record 0 is the state at stage entry; the
/// selected epoch always attains the minimum recorded noisy-validation error
/// (earliest on ties).
#[derive(Debug, Clone, PartialEq)]
pub struct TrainHistory {
    pub records: Vec<EpochRecord>,
    pub selected_epoch: usize,
}

impl TrainHistory {
    pub(crate) fn from_stage(out: &FitOutcome, estimation_error: Option<f64>) -> Self {
        let records = out
            .epochs
            .iter()
            .enumerate()
            .map(|(epoch, stats)| EpochRecord {
                epoch,
                noisy_val_error: stats.val_error,
                train_risk: stats.train_risk,
                estimation_error,
                clean_test_accuracy: stats.test_accuracy,
            })
            .collect();
        TrainHistory {
            records,
            selected_epoch: out.best_epoch,
        }
    }

    pub fn selected(&self) -> &EpochRecord {
        &self.records[self.selected_epoch]
    }

    fn has_estimation(&self) -> bool {
        self.records.iter().any(|r| r.estimation_error.is_some())
    }

    fn has_test(&self) -> bool {
        self.records.iter().any(|r| r.clean_test_accuracy.is_some())
    }

    /// Deterministic CSV: optional columns appear only when populated.
    pub fn to_csv(&self) -> String {
        let est = self.has_estimation();
        let test = self.has_test();
        let mut out = String::from("epoch,noisy_val_error,reweighted_train_risk");
        if est {
            out.push_str(",estimation_error");
        }
        if test {
            out.push_str(",clean_test_accuracy");
        }
        out.push('\n');
        for r in &self.records {
            out.push_str(&format!(
                "{},{},{}",
                r.epoch, r.noisy_val_error, r.train_risk
            ));
            if est {
                match r.estimation_error {
                    Some(e) => out.push_str(&format!(",{e}")),
                    None => out.push(','),
                }
            }
            if test {
                match r.clean_test_accuracy {
                    Some(a) => out.push_str(&format!(",{a}")),
                    None => out.push(','),
                }
            }
            out.push('\n');
        }
        out
    }

    /// Parses the CSV back; `selected_epoch` is not stored in the file, so the
    /// result carries the argmin of the recorded validation errors.
    pub fn from_csv(text: &str, origin: impl AsRef<Path>) -> Result<Self> {
        let origin = origin.as_ref();
        let mut lines = text.lines().enumerate();
        let (_, header) = lines
            .next()
            .ok_or_else(|| Error::format(origin, "line 1", "empty history"))?;
        let cols: Vec<&str> = header.trim().split(',').collect();
        let find = |name: &str| cols.iter().position(|c| *c == name);
        let (Some(i_epoch), Some(i_val), Some(i_risk)) = (
            find("epoch"),
            find("noisy_val_error"),
            find("reweighted_train_risk"),
        ) else {
            return Err(Error::format(origin, "line 1", "missing required columns"));
        };
        let i_est = find("estimation_error");
        let i_acc = find("clean_test_accuracy");

        let mut records = Vec::new();
        for (no, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.trim().split(',').collect();
            let at = || format!("line {}", no + 1);
            let req = |idx: usize| -> Result<f64> {
                fields
                    .get(idx)
                    .and_then(|f| f.parse().ok())
                    .ok_or_else(|| Error::format(origin, at(), "bad numeric field"))
            };
            let opt = |idx: Option<usize>| -> Option<f64> {
                idx.and_then(|i| fields.get(i)).and_then(|f| f.parse().ok())
            };
            records.push(EpochRecord {
                epoch: req(i_epoch)? as usize,
                noisy_val_error: req(i_val)?,
                train_risk: req(i_risk)?,
                estimation_error: opt(i_est),
                clean_test_accuracy: opt(i_acc),
            });
        }
        if records.is_empty() {
            return Err(Error::format(origin, "end of file", "no epochs recorded"));
        }
        let selected_epoch = records
            .iter()
            .enumerate()
            .min_by(|(_, a), (_, b)| {
                a.noisy_val_error
                    .partial_cmp(&b.noisy_val_error)
                    .expect("errors are finite")
            })
            .map(|(i, _)| i)
            .unwrap_or(0);
        Ok(TrainHistory {
            records,
            selected_epoch,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> TrainHistory {
        TrainHistory {
            records: vec![
                EpochRecord {
                    epoch: 0,
                    noisy_val_error: 0.5,
                    train_risk: 1.2,
                    estimation_error: Some(0.3),
                    clean_test_accuracy: Some(0.7),
                },
                EpochRecord {
                    epoch: 1,
                    noisy_val_error: 0.25,
                    train_risk: 0.9,
                    estimation_error: Some(0.2),
                    clean_test_accuracy: Some(0.85),
                },
            ],
            selected_epoch: 1,
        }
    }

    #[test]
    fn csv_round_trip() {
        let h = sample();
        let text = h.to_csv();
        let back = TrainHistory::from_csv(&text, "mem").unwrap();
        assert_eq!(back, h);
    }

    #[test]
    fn csv_omits_absent_columns() {
        let mut h = sample();
        for r in &mut h.records {
            r.estimation_error = None;
            r.clean_test_accuracy = None;
        }
        let text = h.to_csv();
        assert_eq!(
            text.lines().next().unwrap(),
            "epoch,noisy_val_error,reweighted_train_risk"
        );
        let back = TrainHistory::from_csv(&text, "mem").unwrap();
        assert!(back.records[0].estimation_error.is_none());
    }

    #[test]
    fn csv_is_byte_deterministic() {
        assert_eq!(sample().to_csv(), sample().to_csv());
    }
}
