//! Scratch harness for tuning the acceptance-suite training configs.
//! Run: cargo run -p trev-core --release --example tune -- <mode>

use trev_core::config::{MethodConfig, MethodKind, ModelConfig, TrainConfig};
use trev_core::datasets::{
    generate_gaussian_mixture, remove_top_posterior, split_train_val, Dataset,
    GaussianMixtureSpec,
};
use trev_core::estimation::{init_transition, select_pseudo_anchors, train_noisy_posterior};
use trev_core::noise::{build_symmetric, corrupt_labels, estimation_error, TransitionMatrix};
use trev_core::numerics::{Matrix, OptimizerHyper};
use trev_core::revision::{
    model_accuracy, stage2_initialize, stage2_revise, RevisionState, StageLoss,
};
use trev_core::seeds;

fn ring_spec(classes: usize, radius: f64, sigma: f64) -> GaussianMixtureSpec {
    let mut means = Matrix::zeros(classes, 2);
    for i in 0..classes {
        let angle = 2.0 * std::f64::consts::PI * i as f64 / classes as f64;
        means.set(i, 0, radius * angle.cos());
        means.set(i, 1, radius * angle.sin());
    }
    GaussianMixtureSpec::uniform_priors(means, sigma).unwrap()
}

fn anchor_rich_case(
    seed: u64,
    epochs: usize,
    lr: f64,
    wd: f64,
    hidden: usize,
    batch: usize,
    k: usize,
) -> f64 {
    let spec = ring_spec(3, 4.0, 1.0);
    let t = build_symmetric(0.2, 3).unwrap();
    let ds = generate_gaussian_mixture(&spec, 5_000, seed).unwrap();
    let noisy = corrupt_labels(ds.clean_labels().unwrap(), &t, seed + 1).unwrap();
    let ds = ds.with_noisy_labels(noisy).unwrap();
    let (train, val) = split_train_val(&ds, 0.1, seed + 2).unwrap();
    let model_cfg = ModelConfig {
        hidden: vec![hidden],
        biases: true,
    };
    let train_cfg = TrainConfig {
        stage1_epochs: epochs,
        stage1_lr: lr,
        weight_decay: wd,
        batch_size: batch,
        ..TrainConfig::default()
    };
    let pm = train_noisy_posterior(&train, &val, &model_cfg, &train_cfg, seed + 3).unwrap();
    let anchors = select_pseudo_anchors(&pm, &train, k).unwrap();
    let t_hat = init_transition(&pm, &train, &anchors).unwrap();
    estimation_error(&t, t_hat.entries(), None).unwrap()
}

fn capped_dataset(
    seed: u64,
    n: usize,
    radius: f64,
    cap: f64,
) -> (Dataset, Dataset, Dataset, TransitionMatrix) {
    let spec = ring_spec(3, radius, 1.0);
    let raw = generate_gaussian_mixture(&spec, 9_000, seeds::derive(seed, "cap-gen")).unwrap();
    let post = raw.oracle_posteriors().unwrap();
    let scores: Vec<f64> = (0..raw.len())
        .map(|i| post.row(i).iter().copied().fold(f64::MIN, f64::max))
        .collect();
    let clean = raw.clean_labels().unwrap();
    let mut per_class = vec![(0usize, 0usize); 3];
    for (i, &y) in clean.iter().enumerate() {
        per_class[y].1 += 1;
        if scores[i] > cap {
            per_class[y].0 += 1;
        }
    }
    let fraction = per_class
        .iter()
        .map(|&(above, total)| above as f64 / total as f64)
        .fold(0.0f64, f64::max);
    println!("  cap fraction removed: {fraction:.3}");
    let capped = remove_top_posterior(&raw, fraction, &scores).unwrap();
    let keep: Vec<usize> = (0..n).collect();
    let ds = capped.subset(&keep).unwrap();
    let t = build_symmetric(0.5, 3).unwrap();
    let noisy =
        corrupt_labels(ds.clean_labels().unwrap(), &t, seeds::derive(seed, "cap-noise")).unwrap();
    let ds = ds.with_noisy_labels(noisy).unwrap();
    let (train, val) = split_train_val(&ds, 0.1, seeds::derive(seed, "cap-split")).unwrap();
    let test = generate_gaussian_mixture(&spec, 3_000, seeds::derive(seed, "cap-test")).unwrap();
    (train, val, test, t)
}

#[allow(clippy::too_many_arguments)]
fn capped_case(seed: u64, radius: f64, train_cfg: &TrainConfig, hidden: usize, k: usize) {
    let (train, val, test, t_true) = capped_dataset(seed, 5_000, radius, 0.9);
    let model_cfg = ModelConfig {
        hidden: vec![hidden],
        biases: true,
    };
    let method = MethodConfig {
        kind: MethodKind::ReweightR,
        weight_detach: true,
        enforce_valid: false,
        anchors_per_class: k,
    };
    let test_y = test.clean_labels().unwrap();

    let pm = train_noisy_posterior(&train, &val, &model_cfg, train_cfg, seed).unwrap();
    let anchors = select_pseudo_anchors(&pm, &train, k).unwrap();
    let t_hat = init_transition(&pm, &train, &anchors).unwrap();
    let e0 = estimation_error(&t_true, t_hat.entries(), None).unwrap();
    println!(
        "  seed {seed}: stage1 val {:.4}, T_hat row0 {:?}",
        pm.best_val_error,
        t_hat
            .row(0)
            .iter()
            .map(|v| (v * 1000.0).round() / 1000.0)
            .collect::<Vec<_>>()
    );

    for stage in [StageLoss::Reweight, StageLoss::Forward] {
        let (base, _, _) = stage2_initialize(
            &train, &val, &t_hat, stage, &method, &model_cfg, train_cfg, seed, None,
        )
        .unwrap();
        let base_acc = model_accuracy(&base, &test.features, test_y).unwrap();
        let state = RevisionState::new(
            t_hat.clone(),
            &base,
            OptimizerHyper::adam(train_cfg.revision_lr),
            false,
        )
        .unwrap();
        let out = stage2_revise(
            &train,
            &val,
            base,
            state,
            stage,
            &method,
            train_cfg,
            seed,
            Some(&t_true),
            None,
        )
        .unwrap();
        let r_acc = model_accuracy(&out.model, &test.features, test_y).unwrap();
        let mut revised = t_hat.entries().clone();
        revised.scaled_add(&out.delta_t, 1.0).unwrap();
        let ef = estimation_error(&t_true, &revised, None).unwrap();
        let curve: Vec<String> = out
            .history
            .records
            .iter()
            .step_by(out.history.records.len().div_ceil(9).max(1))
            .map(|r| format!("{:.3}", r.estimation_error.unwrap()))
            .collect();
        println!(
            "  seed {seed} {stage:?}: e0 {e0:.4} -> ef {ef:.4} (sel epoch {}), acc base {base_acc:.4} -> R {r_acc:.4} | est curve {}",
            out.history.selected_epoch,
            curve.join(" ")
        );
    }
}

fn main() {
    let mode = std::env::args().nth(1).unwrap_or_else(|| "anchor".into());
    match mode.as_str() {
        "anchor" => {
            for (epochs, lr, wd, hidden, batch, k) in [
                (40, 0.02, 1e-4, 32, 128, 1),
                (25, 0.01, 1e-3, 16, 256, 1),
                (25, 0.01, 1e-3, 16, 256, 10),
                (40, 0.02, 1e-4, 32, 128, 10),
                (15, 0.01, 1e-2, 16, 256, 20),
                (25, 0.01, 1e-2, 32, 128, 50),
            ] {
                let errs: Vec<f64> = (0..3)
                    .map(|s| anchor_rich_case(1000 + s, epochs, lr, wd, hidden, batch, k))
                    .collect();
                println!(
                    "anchor-rich epochs={epochs} lr={lr} wd={wd} hidden={hidden} batch={batch} k={k}: errors {errs:?}"
                );
            }
        }
        "capped" => {
            let train_cfg = TrainConfig {
                stage1_epochs: 60,
                stage1_lr: 0.05,
                stage2_init_epochs: 40,
                stage2_init_lr: 0.03,
                revision_epochs: 40,
                revision_lr: 2e-5,
                batch_size: 64,
                ..TrainConfig::default()
            };
            for seed in [101u64, 102] {
                capped_case(seed, 1.6, &train_cfg, 32, 1);
            }
        }
        other => eprintln!("unknown mode {other}"),
    }
}
