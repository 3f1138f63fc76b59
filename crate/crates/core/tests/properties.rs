//! Property tests for the crate-wide invariants.

use proptest::prelude::*;

use trev_core::noise::{
    build_symmetric, infer_clean_posterior, project_to_valid, TransitionMatrix,
};
use trev_core::numerics::{softmax, solve_linear, Matrix};
use trev_core::revision::{generalization_bound, BoundInputs};

fn simplex(len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(1e-3..1.0f64, len).prop_map(|raw| {
        let total: f64 = raw.iter().sum();
        raw.into_iter().map(|v| v / total).collect()
    })
}

/// Row-stochastic, strictly diagonally dominant transition matrices with
/// diagonal mass at least `min_diag`.
fn dominant_transition(classes: usize, min_diag: f64) -> impl Strategy<Value = TransitionMatrix> {
    let row = (min_diag..0.98f64, simplex(classes - 1));
    prop::collection::vec(row, classes).prop_map(move |rows| {
        let mut m = Matrix::zeros(classes, classes);
        for (i, (diag, off)) in rows.into_iter().enumerate() {
            let mut k = 0;
            for j in 0..classes {
                if j == i {
                    m.set(i, j, diag);
                } else {
                    m.set(i, j, (1.0 - diag) * off[k]);
                    k += 1;
                }
            }
        }
        TransitionMatrix::from_matrix(m).expect("constructed rows are stochastic")
    })
}

proptest! {
    #[test]
    fn softmax_is_a_shift_invariant_distribution(
        // Dyadic logits and shift: the additions below are then exact, so the
        // max-subtraction path sees bit-identical differences and the outputs
        // must match exactly.
        ticks in prop::collection::vec(-(30i64 << 16)..(30i64 << 16), 2..8),
        shift_ticks in -(100i64 << 16)..(100i64 << 16),
    ) {
        let scale = (2.0f64).powi(-16);
        let logits: Vec<f64> = ticks.iter().map(|&k| k as f64 * scale).collect();
        let shift = shift_ticks as f64 * scale;
        let g = softmax(&logits);
        let total: f64 = g.iter().sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
        prop_assert!(g.iter().all(|&v| v > 0.0 && v <= 1.0));
        let shifted: Vec<f64> = logits.iter().map(|z| z + shift).collect();
        prop_assert_eq!(g, softmax(&shifted));
    }

    #[test]
    fn projection_is_idempotent(
        raw in prop::collection::vec(prop::collection::vec(-1.0..2.0f64, 4), 4)
    ) {
        let m = Matrix::from_rows(&raw).unwrap();
        match project_to_valid(&m) {
            Ok(once) => {
                let twice = project_to_valid(once.entries()).unwrap();
                prop_assert_eq!(once.entries().as_slice(), twice.entries().as_slice());
            }
            Err(_) => {
                // A row without positive mass; nothing to test.
            }
        }
    }

    #[test]
    fn clean_posterior_round_trips(
        t in dominant_transition(4, 0.55),
        p in simplex(4),
    ) {
        let noisy = t.noisy_from_clean(&p).unwrap();
        let back = infer_clean_posterior(&t, &noisy).unwrap();
        prop_assert!(back.in_simplex);
        for (a, b) in back.probabilities.iter().zip(&p) {
            prop_assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
    }

    #[test]
    fn transition_text_round_trips_exactly(t in dominant_transition(3, 0.5)) {
        let text = t.to_text();
        let back = TransitionMatrix::from_text(&text, "prop").unwrap();
        prop_assert_eq!(t.entries().as_slice(), back.entries().as_slice());
    }

    #[test]
    fn bound_is_monotone_in_n_and_layer_norms(
        n in 10usize..100_000,
        factor in 1.01..10.0f64,
        m1 in 0.5..5.0f64,
        m2 in 0.5..5.0f64,
    ) {
        let base = BoundInputs {
            input_bound: 1.0,
            classes: 3,
            lipschitz: 1.0,
            loss_bound: 2.0,
            layer_norm_bounds: vec![m1, m2],
            sample_size: n,
            confidence: 0.1,
        };
        base.validate().unwrap();
        let v = generalization_bound(&base);

        let mut more_data = base.clone();
        more_data.sample_size = n * 4;
        prop_assert!(generalization_bound(&more_data) < v);

        let mut bigger_net = base.clone();
        bigger_net.layer_norm_bounds[0] *= factor;
        prop_assert!(generalization_bound(&bigger_net) > v);
        let mut bigger_net2 = base;
        bigger_net2.layer_norm_bounds[1] *= factor;
        prop_assert!(generalization_bound(&bigger_net2) > v);
    }
}

#[test]
fn symmetric_matrix_invertibility_matches_analytic_threshold() {
    // sym-e = (1 - e C/(C-1)) I + e/(C-1) J: eigenvalues are 1 and
    // 1 - e C/(C-1), so the matrix is singular exactly at e = (C-1)/C.
    for classes in [2usize, 3, 5, 10] {
        let critical = (classes - 1) as f64 / classes as f64;
        for eps in [0.0, 0.1, critical / 2.0, critical - 0.05, critical + 0.04] {
            if !(0.0..1.0).contains(&eps) {
                continue;
            }
            let t = build_symmetric(eps, classes).unwrap();
            let unit = {
                let mut v = vec![0.0; classes];
                v[0] = 1.0;
                v
            };
            let result = solve_linear(&t.entries().transpose(), &unit);
            let away_from_critical = (eps - critical).abs() > 1e-3;
            assert!(
                result.is_ok() == away_from_critical || result.is_ok(),
                "eps={eps} classes={classes}: solver disagreed with the eigenvalue test"
            );
            if away_from_critical {
                assert!(result.is_ok(), "eps={eps} classes={classes} should invert");
            }
        }
        // Exactly at the critical rate the matrix is singular.
        let t = build_symmetric(critical, classes).unwrap();
        let unit = {
            let mut v = vec![0.0; classes];
            v[0] = 1.0;
            v
        };
        assert!(solve_linear(&t.entries().transpose(), &unit).is_err());
    }
}
