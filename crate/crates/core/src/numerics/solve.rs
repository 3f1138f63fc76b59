//! Dense linear solve with partial pivoting and a cheap conditioning guard.

use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// Condition estimates above this refuse to solve.
pub const CONDITION_LIMIT: f64 = 1e12;

/// Solves `A x = b` by Gaussian elimination with partial pivoting.
///
/// The condition estimate is the ratio of the largest to the smallest absolute
/// pivot; it is crude but catches both exact singularity and the
/// near-singular transition matrices this crate cares about (for a sym-e
/// matrix the pivots degrade smoothly as e approaches (C-1)/C).
pub fn solve_linear(a: &Matrix, b: &[f64]) -> Result<Vec<f64>> {
    let n = a.rows();
    if a.cols() != n {
        return Err(Error::shape(format!(
            "solve_linear needs a square matrix, got {}x{}",
            a.rows(),
            a.cols()
        )));
    }
    if b.len() != n {
        return Err(Error::shape(format!(
            "solve_linear: rhs of length {} against {n}x{n} matrix",
            b.len()
        )));
    }

    let mut work = a.clone();
    let mut rhs = b.to_vec();
    let mut max_pivot = 0.0f64;
    let mut min_pivot = f64::INFINITY;

    for col in 0..n {
        let mut pivot_row = col;
        let mut pivot_abs = work.get(col, col).abs();
        for r in col + 1..n {
            let cand = work.get(r, col).abs();
            if cand > pivot_abs {
                pivot_abs = cand;
                pivot_row = r;
            }
        }
        if pivot_abs == 0.0 {
            return Err(Error::Singular { cond: f64::INFINITY });
        }
        if pivot_row != col {
            for j in 0..n {
                let tmp = work.get(col, j);
                work.set(col, j, work.get(pivot_row, j));
                work.set(pivot_row, j, tmp);
            }
            rhs.swap(col, pivot_row);
        }
        max_pivot = max_pivot.max(pivot_abs);
        min_pivot = min_pivot.min(pivot_abs);

        let pivot = work.get(col, col);
        for r in col + 1..n {
            let factor = work.get(r, col) / pivot;
            if factor == 0.0 {
                continue;
            }
            work.set(r, col, 0.0);
            for j in col + 1..n {
                let updated = work.get(r, j) - factor * work.get(col, j);
                work.set(r, j, updated);
            }
            rhs[r] -= factor * rhs[col];
        }
    }

    let cond = max_pivot / min_pivot;
    if !cond.is_finite() || cond > CONDITION_LIMIT {
        return Err(Error::Singular { cond });
    }

    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut acc = rhs[i];
        for j in i + 1..n {
            acc -= work.get(i, j) * x[j];
        }
        x[i] = acc / work.get(i, i);
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::numeric("linear solve produced non-finite entries"));
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_returns_rhs() {
        let a = Matrix::identity(3);
        let b = vec![0.3, -1.0, 2.5];
        assert_eq!(solve_linear(&a, &b).unwrap(), b);
    }

    #[test]
    fn two_by_two_transition_column() {
        // A e1 = first column of A, so solving against that column returns e1.
        let a = Matrix::from_rows(&[vec![0.9, 0.2], vec![0.1, 0.8]]).unwrap();
        let x = solve_linear(&a, &[0.9, 0.1]).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-12);
        assert!(x[1].abs() < 1e-12);
    }

    #[test]
    fn equal_rows_are_singular() {
        let a = Matrix::from_rows(&[vec![1.0, 2.0], vec![1.0, 2.0]]).unwrap();
        match solve_linear(&a, &[1.0, 1.0]) {
            Err(Error::Singular { .. }) => {}
            other => panic!("expected singularity error, got {other:?}"),
        }
    }

    #[test]
    fn near_singular_reports_condition() {
        let a = Matrix::from_rows(&[vec![1.0, 1.0], vec![1.0, 1.0 + 1e-14]]).unwrap();
        match solve_linear(&a, &[1.0, 1.0]) {
            Err(Error::Singular { cond }) => assert!(cond > CONDITION_LIMIT),
            other => panic!("expected singularity error, got {other:?}"),
        }
    }

    #[test]
    fn random_system_residual_is_small() {
        let a = Matrix::from_rows(&[
            vec![4.0, 1.0, -0.5],
            vec![0.3, 3.0, 0.2],
            vec![-1.0, 0.5, 5.0],
        ])
        .unwrap();
        let x_true = vec![1.0, -2.0, 0.25];
        let b = a.matvec(&x_true).unwrap();
        let x = solve_linear(&a, &b).unwrap();
        for (xi, ti) in x.iter().zip(&x_true) {
            assert!((xi - ti).abs() < 1e-12);
        }
    }
}
