//! Subcommand implementations.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use trev_core::config::ExperimentConfig;
use trev_core::datasets::{write_csv, LabelColumn};
use trev_core::revision::{prepare_corrupted, run_t_revision, RunSummary, TrainHistory};

use crate::{CliError, CliResult};

/// Loads, parses, validates, and applies overrides. All failures here are
/// config errors.
fn load_config(
    path: &Path,
    out: Option<PathBuf>,
    seed: Option<u64>,
) -> CliResult<ExperimentConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::config(format!("cannot read {}: {e}", path.display())))?;
    let mut cfg: ExperimentConfig = toml::from_str(&text)
        .map_err(|e| CliError::config(format!("cannot parse {}: {e}", path.display())))?;
    if let Some(out) = out {
        cfg.output_dir = out;
    }
    if let Some(seed) = seed {
        cfg.seeds = vec![seed];
    }
    cfg.validate()
        .map_err(|e| CliError::config(format!("invalid config {}: {e}", path.display())))?;
    Ok(cfg)
}

/// Creates the output directory; refuses a non-empty one unless forced.
fn prepare_out_dir(dir: &Path, force: bool) -> CliResult<()> {
    if dir.exists() {
        let occupied = std::fs::read_dir(dir)
            .map_err(|e| CliError::data(format!("cannot read {}: {e}", dir.display())))?
            .next()
            .is_some();
        if occupied && !force {
            return Err(CliError::data(format!(
                "output directory {} is not empty; pass --force to write anyway",
                dir.display()
            )));
        }
    } else {
        std::fs::create_dir_all(dir)
            .map_err(|e| CliError::data(format!("cannot create {}: {e}", dir.display())))?;
    }
    Ok(())
}

fn primary_seed(cfg: &ExperimentConfig) -> u64 {
    cfg.seeds[0]
}

pub fn gen_data(
    config: &Path,
    out: Option<PathBuf>,
    seed: Option<u64>,
    force: bool,
) -> CliResult<()> {
    let cfg = load_config(config, out, seed)?;
    let trev_core::config::DataConfig::Gaussian {
        train_n, test_n, ..
    } = &cfg.data
    else {
        return Err(CliError::config(
            "gen-data needs a gaussian data source; csv/idx data already exists on disk",
        ));
    };
    let (train_n, test_n) = (*train_n, *test_n);
    let seed = primary_seed(&cfg);
    let dir = cfg.output_dir.clone();
    prepare_out_dir(&dir, force)?;

    let spec = trev_core::revision::gaussian_spec_from_config(&cfg.data)
        .map_err(CliError::runtime)?;
    let train = trev_core::datasets::generate_gaussian_mixture(
        &spec,
        train_n,
        trev_core::seeds::derive(seed, "data-train"),
    )
    .map_err(CliError::runtime)?;
    write_csv(&train, LabelColumn::Clean, dir.join("train.csv")).map_err(CliError::runtime)?;
    if test_n > 0 {
        let test = trev_core::datasets::generate_gaussian_mixture(
            &spec,
            test_n,
            trev_core::seeds::derive(seed, "data-test"),
        )
        .map_err(CliError::runtime)?;
        write_csv(&test, LabelColumn::Clean, dir.join("test.csv")).map_err(CliError::runtime)?;
    }

    let mut meta = String::new();
    let _ = writeln!(meta, "source = gaussian");
    let _ = writeln!(meta, "seed = {seed}");
    let _ = writeln!(meta, "train_n = {train_n}");
    let _ = writeln!(meta, "test_n = {test_n}");
    std::fs::write(dir.join("gen_meta.txt"), meta)
        .map_err(|e| CliError::data(e.to_string()))?;
    println!("wrote clean data to {}", dir.display());
    Ok(())
}

pub fn corrupt(
    config: &Path,
    out: Option<PathBuf>,
    seed: Option<u64>,
    force: bool,
) -> CliResult<()> {
    let cfg = load_config(config, out, seed)?;
    let seed = primary_seed(&cfg);
    let dir = cfg.output_dir.clone();
    prepare_out_dir(&dir, force)?;

    let (train_full, _test, t_true) =
        prepare_corrupted(&cfg, seed).map_err(CliError::runtime)?;
    write_csv(&train_full, LabelColumn::Noisy, dir.join("train_noisy.csv"))
        .map_err(CliError::runtime)?;

    let mut meta = String::new();
    let _ = writeln!(meta, "seed = {seed}");
    if let Some(t) = &t_true {
        t.save(dir.join("transition_true.txt"))
            .map_err(CliError::runtime)?;
        let _ = writeln!(meta, "classes = {}", t.num_classes());
    }
    if let (Ok(clean), Ok(noisy)) = (train_full.clean_labels(), train_full.noisy_labels()) {
        let flipped = clean.iter().zip(noisy).filter(|(a, b)| a != b).count();
        let rate = flipped as f64 / clean.len() as f64;
        let _ = writeln!(meta, "n = {}", clean.len());
        let _ = writeln!(meta, "empirical_flip_rate = {rate}");
    }
    std::fs::write(dir.join("corrupt_meta.txt"), meta)
        .map_err(|e| CliError::data(e.to_string()))?;
    println!("wrote noisy data to {}", dir.display());
    Ok(())
}

/// Worker cap for multi-seed training: TREV_THREADS, else the smaller of the
/// seed count and the available parallelism.
fn seed_workers(n_seeds: usize) -> usize {
    let available = std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1);
    let cap = std::env::var("TREV_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&v| v > 0)
        .unwrap_or(available);
    cap.min(n_seeds).max(1)
}

pub fn train(
    config: &Path,
    out: Option<PathBuf>,
    seed: Option<u64>,
    force: bool,
) -> CliResult<()> {
    let cfg = load_config(config, out, seed)?;
    let dir = cfg.output_dir.clone();
    prepare_out_dir(&dir, force)?;

    let resolved = toml::to_string_pretty(&cfg)
        .map_err(|e| CliError::config(format!("cannot serialize config: {e}")))?;
    std::fs::write(dir.join("config.toml"), resolved)
        .map_err(|e| CliError::data(e.to_string()))?;

    let seeds = cfg.seeds.clone();
    let workers = seed_workers(seeds.len());
    let next = AtomicUsize::new(0);
    let failures: Mutex<Vec<(u64, CliError)>> = Mutex::new(Vec::new());

    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= seeds.len() {
                    break;
                }
                let run_seed = seeds[i];
                let run_dir = dir.join(format!("seed_{run_seed}"));
                let outcome = run_t_revision(&cfg, run_seed)
                    .and_then(|report| report.write_to_dir(&run_dir))
                    .map_err(CliError::runtime);
                match outcome {
                    Ok(()) => println!("seed {run_seed}: done -> {}", run_dir.display()),
                    Err(e) => failures.lock().unwrap().push((run_seed, e)),
                }
            });
        }
    });

    let failures = failures.into_inner().unwrap();
    if let Some((seed, first)) = failures.into_iter().next() {
        return Err(CliError {
            code: first.code,
            message: format!("seed {seed} failed: {}", first.message),
        });
    }
    println!("all {} run(s) written under {}", seeds.len(), dir.display());
    Ok(())
}

struct RunRecord {
    summary: RunSummary,
    history: TrainHistory,
}

/// A run directory holds summary.txt; parents of seed_<N> directories are
/// expanded one level.
fn collect_run_dirs(inputs: &[PathBuf]) -> CliResult<Vec<PathBuf>> {
    let mut dirs = Vec::new();
    let mut offenders = Vec::new();
    for input in inputs {
        if input.join("summary.txt").is_file() {
            dirs.push(input.clone());
            continue;
        }
        let mut found = false;
        if let Ok(entries) = std::fs::read_dir(input) {
            let mut children: Vec<PathBuf> = entries
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.join("summary.txt").is_file())
                .collect();
            children.sort();
            if !children.is_empty() {
                found = true;
                dirs.extend(children);
            }
        }
        if !found {
            offenders.push(input.display().to_string());
        }
    }
    if !offenders.is_empty() {
        return Err(CliError::data(format!(
            "not run directories (no summary.txt found): {}",
            offenders.join(", ")
        )));
    }
    Ok(dirs)
}

fn load_runs(dirs: &[PathBuf]) -> CliResult<Vec<RunRecord>> {
    let mut runs = Vec::new();
    let mut offenders = Vec::new();
    for dir in dirs {
        let read = || -> Result<RunRecord, trev_core::Error> {
            let summary_path = dir.join("summary.txt");
            let summary_text = std::fs::read_to_string(&summary_path)?;
            let summary = RunSummary::from_text(&summary_text, &summary_path)?;
            let history_path = dir.join("history.csv");
            let history_text = std::fs::read_to_string(&history_path)?;
            let history = TrainHistory::from_csv(&history_text, &history_path)?;
            Ok(RunRecord { summary, history })
        };
        match read() {
            Ok(r) => runs.push(r),
            Err(e) => offenders.push(format!("{}: {e}", dir.display())),
        }
    }
    if !offenders.is_empty() {
        return Err(CliError::data(format!(
            "incompatible run directories:\n  {}",
            offenders.join("\n  ")
        )));
    }
    Ok(runs)
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

pub fn report(inputs: &[PathBuf], out: &Path, force: bool) -> CliResult<()> {
    let dirs = collect_run_dirs(inputs)?;
    let runs = load_runs(&dirs)?;
    prepare_out_dir(out, force)?;

    let mut methods: Vec<String> = runs.iter().map(|r| r.summary.method.clone()).collect();
    methods.sort();
    methods.dedup();

    // Comparison table: mean +/- std of clean test accuracy per method,
    // formatted as percentages `mm.dd+/-ss.dd`.
    let mut table = String::from(
        "method,runs,mean_accuracy,std_accuracy,accuracy_pct,mean_final_estimation_error\n",
    );
    for method in &methods {
        let group: Vec<&RunRecord> = runs
            .iter()
            .filter(|r| &r.summary.method == method)
            .collect();
        let accs: Vec<f64> = group
            .iter()
            .filter_map(|r| r.summary.clean_test_accuracy)
            .collect();
        let ests: Vec<f64> = group
            .iter()
            .filter_map(|r| r.summary.final_estimation_error)
            .collect();
        let _ = write!(table, "{method},{}", group.len());
        if accs.is_empty() {
            table.push_str(",,,");
        } else {
            let (mean, std) = mean_std(&accs);
            let _ = write!(
                table,
                ",{mean},{std},{:.2}\u{b1}{:.2}",
                mean * 100.0,
                std * 100.0
            );
        }
        if ests.is_empty() {
            table.push_str(",\n");
        } else {
            let (mean, _) = mean_std(&ests);
            let _ = writeln!(table, ",{mean}");
        }
    }
    std::fs::write(out.join("comparison.csv"), table)
        .map_err(|e| CliError::data(e.to_string()))?;

    // Long-format curves: one row per (method, seed, epoch).
    let mut curves = String::from(
        "method,seed,epoch,noisy_val_error,reweighted_train_risk,estimation_error,clean_test_accuracy\n",
    );
    let mut ordered: Vec<&RunRecord> = runs.iter().collect();
    ordered.sort_by(|a, b| {
        a.summary
            .method
            .cmp(&b.summary.method)
            .then(a.summary.seed.cmp(&b.summary.seed))
    });
    for run in ordered {
        for rec in &run.history.records {
            let est = rec
                .estimation_error
                .map(|v| v.to_string())
                .unwrap_or_default();
            let acc = rec
                .clean_test_accuracy
                .map(|v| v.to_string())
                .unwrap_or_default();
            let _ = writeln!(
                curves,
                "{},{},{},{},{},{},{}",
                run.summary.method,
                run.summary.seed,
                rec.epoch,
                rec.noisy_val_error,
                rec.train_risk,
                est,
                acc
            );
        }
    }
    std::fs::write(out.join("curves.csv"), curves)
        .map_err(|e| CliError::data(e.to_string()))?;

    println!(
        "aggregated {} run(s) over {} method(s) into {}",
        runs.len(),
        methods.len(),
        out.display()
    );
    Ok(())
}
