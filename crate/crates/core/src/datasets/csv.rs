//! CSV dataset format: header `label,f1,...,fd`, one instance per line.
//! Labels are zero-based class indices.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use crate::datasets::Dataset;
use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// Which label column a CSV write should emit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelColumn {
    Clean,
    Noisy,
}

/// Reads a dataset; the labels land in `clean_labels` (a noisy file is just a
/// CSV whose labels happen to be corrupted — the caller decides what they
/// mean).
pub fn load_csv(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let reader = BufReader::new(File::open(path)?);
    let mut lines = reader.lines().enumerate();

    let header = match lines.next() {
        Some((no, line)) => {
            line.map_err(|e| Error::format(path, format!("line {}", no + 1), e.to_string()))?
        }
        None => return Err(Error::format(path, "line 1", "empty file")),
    };
    let columns: Vec<&str> = header.trim().split(',').collect();
    if columns.first() != Some(&"label") {
        return Err(Error::format(
            path,
            "line 1",
            format!("header must start with 'label', got {:?}", columns.first()),
        ));
    }
    let dim = columns.len() - 1;
    if dim == 0 {
        return Err(Error::format(path, "line 1", "no feature columns"));
    }

    let mut labels = Vec::new();
    let mut data = Vec::new();
    for (no, line) in lines {
        let line =
            line.map_err(|e| Error::format(path, format!("line {}", no + 1), e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.trim().split(',');
        let label_tok = fields.next().unwrap_or("");
        let label: usize = label_tok.parse().map_err(|_| {
            Error::format(
                path,
                format!("line {}", no + 1),
                format!("bad label {label_tok:?}"),
            )
        })?;
        labels.push(label);
        let mut count = 0;
        for tok in fields {
            let v: f64 = tok.parse().map_err(|_| {
                Error::format(
                    path,
                    format!("line {}", no + 1),
                    format!("bad feature value {tok:?}"),
                )
            })?;
            data.push(v);
            count += 1;
        }
        if count != dim {
            return Err(Error::format(
                path,
                format!("line {}", no + 1),
                format!("expected {dim} features, found {count}"),
            ));
        }
    }
    if labels.is_empty() {
        return Err(Error::format(path, "end of file", "no instances"));
    }
    let n = labels.len();
    let features = Matrix::from_vec(n, dim, data)?;
    let classes = labels.iter().copied().max().unwrap_or(0) + 1;
    Dataset::new(features, classes.max(2))?.with_clean_labels(labels)
}

/// Writes a dataset with the chosen label column. Floats use 17 significant
/// digits so the file parses back to the identical values.
pub fn write_csv(ds: &Dataset, which: LabelColumn, path: impl AsRef<Path>) -> Result<()> {
    let labels = match which {
        LabelColumn::Clean => ds.clean_labels()?,
        LabelColumn::Noisy => ds.noisy_labels()?,
    };
    let mut out = String::from("label");
    for j in 1..=ds.dim() {
        let _ = write!(out, ",f{j}");
    }
    out.push('\n');
    for i in 0..ds.len() {
        let _ = write!(out, "{}", labels[i]);
        for v in ds.instance(i) {
            let _ = write!(out, ",{v:.16e}");
        }
        out.push('\n');
    }
    Ok(std::fs::write(path, out)?)
}
