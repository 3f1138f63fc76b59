//! Noise transition matrices: construction, validation, label corruption,
//! projection onto the valid set, and comparison.
//!
//! A [`TransitionMatrix`] is always row-stochastic with entries in `[0, 1]`;
//! unvalidated `T_hat + delta_T` sums that arise during revision are kept as
//! plain [`Matrix`] values until they go through [`project_to_valid`].

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{solve_linear, Matrix};

/// Row sums may deviate from one by at most this much on construction.
pub const ROW_SUM_TOL: f64 = 1e-9;

/// Rows whose sum is already this close to one are left untouched by
/// [`project_to_valid`], which makes the projection exactly idempotent.
const RENORM_SKIP_TOL: f64 = 1e-12;

/// Row-stochastic `C x C` matrix; entry `(i, j)` is the probability that a
/// clean label `i` is observed as noisy label `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionMatrix {
    entries: Matrix,
}

impl TransitionMatrix {
    pub fn from_matrix(entries: Matrix) -> Result<Self> {
        if entries.rows() != entries.cols() {
            return Err(Error::shape(format!(
                "transition matrix must be square, got {}x{}",
                entries.rows(),
                entries.cols()
            )));
        }
        if entries.rows() < 2 {
            return Err(Error::domain("transition matrix needs at least 2 classes"));
        }
        for i in 0..entries.rows() {
            let row = entries.row(i);
            if row.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
                return Err(Error::domain(format!(
                    "row {i} has entries outside [0, 1]"
                )));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                return Err(Error::domain(format!(
                    "row {i} sums to {sum}, expected 1 within {ROW_SUM_TOL:e}"
                )));
            }
        }
        Ok(TransitionMatrix { entries })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        TransitionMatrix::from_matrix(Matrix::from_rows(rows)?)
    }

    pub fn identity(classes: usize) -> Result<Self> {
        TransitionMatrix::from_matrix(Matrix::identity(classes))
    }

    #[inline]
    pub fn num_classes(&self) -> usize {
        self.entries.rows()
    }

    #[inline]
    pub fn entries(&self) -> &Matrix {
        &self.entries
    }

    #[inline]
    pub fn entry(&self, i: usize, j: usize) -> f64 {
        self.entries.get(i, j)
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        self.entries.row(i)
    }

    /// Strict dominance of each diagonal entry over its row.
    pub fn is_diagonally_dominant(&self) -> bool {
        (0..self.num_classes()).all(|i| {
            self.row(i)
                .iter()
                .enumerate()
                .all(|(j, &v)| j == i || self.entry(i, i) > v)
        })
    }

    pub fn min_diagonal(&self) -> f64 {
        (0..self.num_classes())
            .map(|i| self.entry(i, i))
            .fold(f64::INFINITY, f64::min)
    }

    /// Noisy class posterior from a clean one: `T^T p`.
    pub fn noisy_from_clean(&self, clean: &[f64]) -> Result<Vec<f64>> {
        self.entries.transposed_matvec(clean)
    }

    /// Plain-text form: first line the class count, then one row per line.
    /// 17 significant digits, enough for an exact `f64` round-trip.
    pub fn to_text(&self) -> String {
        let c = self.num_classes();
        let mut out = String::new();
        let _ = writeln!(out, "{c}");
        for i in 0..c {
            let row = self
                .row(i)
                .iter()
                .map(|v| format!("{v:.16e}"))
                .collect::<Vec<_>>()
                .join(" ");
            let _ = writeln!(out, "{row}");
        }
        out
    }

    pub fn from_text(text: &str, origin: impl AsRef<Path>) -> Result<Self> {
        let origin = origin.as_ref();
        let raw = parse_matrix_text(text, origin)?;
        TransitionMatrix::from_matrix(raw)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        Ok(std::fs::write(path, self.to_text())?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(&path)?;
        TransitionMatrix::from_text(&text, path.as_ref())
    }
}

/// Parses the shared text layout without validating row-stochasticity, so the
/// same reader serves raw revised matrices.
pub fn parse_matrix_text(text: &str, origin: &Path) -> Result<Matrix> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (header_no, header) = lines
        .next()
        .ok_or_else(|| Error::format(origin, "line 1", "empty file"))?;
    let c: usize = header.trim().parse().map_err(|_| {
        Error::format(
            origin,
            format!("line {}", header_no + 1),
            "expected the class count",
        )
    })?;
    if c < 2 {
        return Err(Error::format(
            origin,
            format!("line {}", header_no + 1),
            "class count must be at least 2",
        ));
    }
    let mut rows = Vec::with_capacity(c);
    for _ in 0..c {
        let (no, line) = lines.next().ok_or_else(|| {
            Error::format(origin, "end of file", format!("expected {c} matrix rows"))
        })?;
        let row: Vec<f64> = line
            .split_whitespace()
            .map(|tok| {
                tok.parse::<f64>().map_err(|_| {
                    Error::format(
                        origin,
                        format!("line {}", no + 1),
                        format!("bad number {tok:?}"),
                    )
                })
            })
            .collect::<Result<_>>()?;
        if row.len() != c {
            return Err(Error::format(
                origin,
                format!("line {}", no + 1),
                format!("expected {c} entries, found {}", row.len()),
            ));
        }
        rows.push(row);
    }
    Matrix::from_rows(&rows)
}

/// Writes a raw (possibly invalid) matrix in the same text layout.
pub fn raw_matrix_to_text(m: &Matrix) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{}", m.rows());
    for i in 0..m.rows() {
        let row = m
            .row(i)
            .iter()
            .map(|v| format!("{v:.16e}"))
            .collect::<Vec<_>>()
            .join(" ");
        let _ = writeln!(out, "{row}");
    }
    out
}

/// How to corrupt clean labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum NoiseSpec {
    /// sym-e: diagonal `1 - rate`, off-diagonal `rate / (C - 1)`.
    Symmetric { rate: f64, classes: usize },
    /// Any explicit transition matrix, loaded from the text format.
    Custom { matrix: std::path::PathBuf },
    /// No corruption.
    None,
}

impl NoiseSpec {
    pub fn build(&self) -> Result<Option<TransitionMatrix>> {
        match self {
            NoiseSpec::Symmetric { rate, classes } => {
                Ok(Some(build_symmetric(*rate, *classes)?))
            }
            NoiseSpec::Custom { matrix } => Ok(Some(TransitionMatrix::load(matrix)?)),
            NoiseSpec::None => Ok(None),
        }
    }
}

/// Symmetric flip matrix: `1 - rate` on the diagonal, `rate / (C - 1)` off it.
pub fn build_symmetric(rate: f64, classes: usize) -> Result<TransitionMatrix> {
    if classes < 2 {
        return Err(Error::domain("symmetric noise needs at least 2 classes"));
    }
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::domain(format!(
            "symmetric noise rate must lie in [0, 1), got {rate}"
        )));
    }
    let off = rate / (classes - 1) as f64;
    let mut m = Matrix::zeros(classes, classes);
    for i in 0..classes {
        for j in 0..classes {
            m.set(i, j, if i == j { 1.0 - rate } else { off });
        }
    }
    TransitionMatrix::from_matrix(m)
}

/// Draws a noisy label for each clean label from the matching row of `t`.
///
/// Instance `i` uses ChaCha8 stream `i` under the given seed, so the draw for
/// an instance does not depend on how many instances precede it.
pub fn corrupt_labels(labels: &[usize], t: &TransitionMatrix, seed: u64) -> Result<Vec<usize>> {
    let c = t.num_classes();
    let mut out = Vec::with_capacity(labels.len());
    for (i, &y) in labels.iter().enumerate() {
        if y >= c {
            return Err(Error::domain(format!(
                "label {y} at index {i} out of range for {c} classes"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(i as u64);
        let u: f64 = rng.random();
        out.push(sample_row(t.row(y), u));
    }
    Ok(out)
}

/// Inverse-CDF draw over one row. `u` lies in `[0, 1)`; any rounding slack at
/// the top of the CDF falls to the last positive-probability class.
fn sample_row(row: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (j, &p) in row.iter().enumerate() {
        acc += p;
        if u < acc {
            return j;
        }
    }
    row.iter()
        .rposition(|&p| p > 0.0)
        .expect("row-stochastic rows have positive mass")
}

/// Clamps negatives to zero and renormalizes each row.
///
/// Rows that are already clean (no negatives, sum within `1e-12` of one) pass
/// through bit-identically, so applying the projection twice equals applying
/// it once.
pub fn project_to_valid(raw: &Matrix) -> Result<TransitionMatrix> {
    if raw.rows() != raw.cols() {
        return Err(Error::shape(format!(
            "projection needs a square matrix, got {}x{}",
            raw.rows(),
            raw.cols()
        )));
    }
    let mut out = raw.clone();
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        let mut clamped = false;
        for v in row.iter_mut() {
            if *v < 0.0 {
                *v = 0.0;
                clamped = true;
            }
        }
        let sum: f64 = row.iter().sum();
        if sum <= 0.0 {
            return Err(Error::DegenerateRow { row: i });
        }
        if clamped || (sum - 1.0).abs() > RENORM_SKIP_TOL {
            for v in row.iter_mut() {
                *v /= sum;
            }
        }
    }
    TransitionMatrix::from_matrix(out)
}

/// `||T - T_hat - delta||_1 / ||T||_1` with entrywise L1 norms.
pub fn estimation_error(
    t_true: &TransitionMatrix,
    t_hat: &Matrix,
    delta_t: Option<&Matrix>,
) -> Result<f64> {
    let mut diff = t_true.entries().sub(t_hat)?;
    if let Some(d) = delta_t {
        diff.scaled_add(d, -1.0)?;
    }
    Ok(diff.l1_norm() / t_true.entries().l1_norm())
}

/// Result of inverting the noisy posterior through `T`.
#[derive(Debug, Clone)]
pub struct CleanPosterior {
    /// Solution of `T^T p = noisy`. Deliberately not clipped or renormalized:
    /// with a misspecified `T` it can leave the simplex, and that failure mode
    /// is the point of exposing it.
    pub probabilities: Vec<f64>,
    /// Whether the solution lies on the simplex within `1e-9`.
    pub in_simplex: bool,
}

/// Solves `T^T p = noisy_posterior` for the clean posterior.
pub fn infer_clean_posterior(
    t: &TransitionMatrix,
    noisy_posterior: &[f64],
) -> Result<CleanPosterior> {
    let p = solve_linear(&t.entries().transpose(), noisy_posterior)?;
    let sum: f64 = p.iter().sum();
    let in_simplex = p.iter().all(|&v| v >= -1e-9) && (sum - 1.0).abs() <= 1e-9;
    Ok(CleanPosterior {
        probabilities: p,
        in_simplex,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn symmetric_zero_rate_is_identity() {
        let t = build_symmetric(0.0, 5).unwrap();
        assert_eq!(t.entries(), &Matrix::identity(5));
    }

    #[test]
    fn symmetric_frozen_values() {
        let t = build_symmetric(0.5, 3).unwrap();
        assert_eq!(t.entry(0, 0), 0.5);
        assert_eq!(t.entry(0, 1), 0.25);
        let t = build_symmetric(0.2, 10).unwrap();
        assert!((t.entry(3, 3) - 0.8).abs() < 1e-15);
        assert!((t.entry(3, 4) - 0.2 / 9.0).abs() < 1e-15);
    }

    #[test]
    fn symmetric_rejects_bad_arguments() {
        assert!(build_symmetric(1.0, 3).is_err());
        assert!(build_symmetric(0.2, 1).is_err());
    }

    #[test]
    fn validation_rejects_bad_rows() {
        assert!(TransitionMatrix::from_rows(&[vec![0.9, 0.2], vec![0.1, 0.8]]).is_err());
        assert!(TransitionMatrix::from_rows(&[vec![1.1, -0.1], vec![0.5, 0.5]]).is_err());
    }

    #[test]
    fn identity_corruption_is_identity() {
        let t = TransitionMatrix::identity(4).unwrap();
        let labels: Vec<usize> = (0..200).map(|i| i % 4).collect();
        assert_eq!(corrupt_labels(&labels, &t, 9).unwrap(), labels);
    }

    #[test]
    fn permutation_row_flips_every_label() {
        let t = TransitionMatrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        let labels = vec![0, 1, 0, 0, 1];
        assert_eq!(corrupt_labels(&labels, &t, 1).unwrap(), vec![1, 0, 1, 1, 0]);
    }

    #[test]
    fn corruption_is_order_independent_and_seeded() {
        let t = build_symmetric(0.4, 3).unwrap();
        let labels: Vec<usize> = (0..500).map(|i| i % 3).collect();
        let a = corrupt_labels(&labels, &t, 42).unwrap();
        let b = corrupt_labels(&labels, &t, 42).unwrap();
        assert_eq!(a, b);
        let c = corrupt_labels(&labels, &t, 43).unwrap();
        assert_ne!(a, c);
        // Prefix corruption matches the prefix of the full corruption.
        let prefix = corrupt_labels(&labels[..100], &t, 42).unwrap();
        assert_eq!(&a[..100], prefix.as_slice());
    }

    #[test]
    fn symmetric_half_flip_rate_matches_binomial_oracle() {
        // sym-0.5 flips a label with probability 0.5; over n = 20000 draws the
        // empirical off-class fraction stays within 3 binomial sigmas.
        let n = 20_000;
        let t = build_symmetric(0.5, 10).unwrap();
        let labels: Vec<usize> = (0..n).map(|i| i % 10).collect();
        let noisy = corrupt_labels(&labels, &t, 7).unwrap();
        let flipped = labels
            .iter()
            .zip(&noisy)
            .filter(|(a, b)| a != b)
            .count() as f64;
        let frac = flipped / n as f64;
        let sigma3 = 3.0 * (0.5 * 0.5 / n as f64).sqrt();
        assert!(
            (frac - 0.5).abs() < sigma3,
            "flip fraction {frac} outside 0.5 +/- {sigma3}"
        );
    }

    #[test]
    fn corrupt_rejects_out_of_range_label() {
        let t = build_symmetric(0.1, 3).unwrap();
        assert!(matches!(
            corrupt_labels(&[0, 3], &t, 0),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn projection_clamp_then_normalize() {
        let raw = Matrix::from_rows(&[vec![1.1, -0.1], vec![0.1, 0.9]]).unwrap();
        let t = project_to_valid(&raw).unwrap();
        assert_eq!(t.row(0), &[1.0, 0.0]);
        assert_eq!(t.row(1), &[0.1, 0.9]);
    }

    #[test]
    fn projection_is_exactly_idempotent() {
        let raw = Matrix::from_rows(&[
            vec![0.7, -0.2, 0.8],
            vec![0.31, 0.29, 0.4],
            vec![-1.0, 0.35, 0.9],
        ])
        .unwrap();
        let once = project_to_valid(&raw).unwrap();
        let twice = project_to_valid(once.entries()).unwrap();
        assert_eq!(once.entries().as_slice(), twice.entries().as_slice());
    }

    #[test]
    fn projection_rejects_nonpositive_row() {
        let raw = Matrix::from_rows(&[vec![-1.0, -2.0], vec![0.5, 0.5]]).unwrap();
        assert!(matches!(
            project_to_valid(&raw),
            Err(Error::DegenerateRow { row: 0 })
        ));
    }

    #[test]
    fn estimation_error_hand_values() {
        let t = build_symmetric(0.2, 2).unwrap();
        let exact = estimation_error(&t, t.entries(), None).unwrap();
        assert_eq!(exact, 0.0);
        // ||T - I||_1 / ||T||_1 = 0.8 / 2 = 0.4.
        let e = estimation_error(&t, &Matrix::identity(2), None).unwrap();
        assert!((e - 0.4).abs() < 1e-15);
    }

    #[test]
    fn estimation_error_is_homogeneous() {
        let t = build_symmetric(0.3, 3).unwrap();
        let t_hat = build_symmetric(0.25, 3).unwrap();
        let base = estimation_error(&t, t_hat.entries(), None).unwrap();
        // Doubling the residual doubles the error: T_hat' = T - 2 (T - T_hat).
        let mut far = t.entries().clone();
        let diff = t.entries().sub(t_hat.entries()).unwrap();
        far.scaled_add(&diff, -2.0).unwrap();
        let doubled = estimation_error(&t, &far, None).unwrap();
        assert!((doubled - 2.0 * base).abs() < 1e-12);
    }

    #[test]
    fn infer_identity_returns_input() {
        let t = TransitionMatrix::identity(3).unwrap();
        let noisy = vec![0.2, 0.5, 0.3];
        let p = infer_clean_posterior(&t, &noisy).unwrap();
        assert!(p.in_simplex);
        for (a, b) in p.probabilities.iter().zip(&noisy) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn infer_recovers_unit_vector() {
        let t = TransitionMatrix::from_rows(&[vec![0.9, 0.1], vec![0.2, 0.8]]).unwrap();
        // T^T e1 = [0.9, 0.1].
        let p = infer_clean_posterior(&t, &[0.9, 0.1]).unwrap();
        assert!((p.probabilities[0] - 1.0).abs() < 1e-12);
        assert!(p.probabilities[1].abs() < 1e-12);
        assert!(p.in_simplex);
    }

    #[test]
    fn infer_flags_out_of_simplex_results() {
        // Misspecified T against a noisy posterior it cannot explain.
        let t = TransitionMatrix::from_rows(&[vec![0.99, 0.01], vec![0.01, 0.99]]).unwrap();
        let p = infer_clean_posterior(&t, &[0.0, 1.0]).unwrap();
        assert!(!p.in_simplex);
        assert!(p.probabilities[0] < 0.0);
    }

    #[test]
    fn text_round_trip_is_exact() {
        let t = build_symmetric(1.0 / 3.0, 4).unwrap();
        let text = t.to_text();
        let back = TransitionMatrix::from_text(&text, "mem").unwrap();
        assert_eq!(t.entries().as_slice(), back.entries().as_slice());
    }

    #[test]
    fn text_parse_errors_carry_location() {
        let err = TransitionMatrix::from_text("3\n0.5 0.5\n", "t.txt").unwrap_err();
        match err {
            Error::Format { at, .. } => assert_eq!(at, "line 2"),
            other => panic!("unexpected {other:?}"),
        }
    }
}
