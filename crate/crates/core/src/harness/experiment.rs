use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};

use crate::data::{format_real, generate_synthetic, load_csv, split_train_test, Dataset};
use crate::error::{Error, Result};
use crate::metrics::RunLog;
use crate::rng::derive_seed;
use crate::scenario::{build_conventional, build_ordered, build_shuffled, default_base_classes, make_profile};
use crate::scenario::{ScenarioKind, TaskSequence};
use crate::training::{run_incremental, NoopObserver, RunSettings};

use super::config::{DatasetSpec, ExperimentConfig};
use super::outputs::{lws_csv, mean_std, per_class_csv, results_csv, results_rows, write_file, ResultRow, SUMMARY_HEADER};

/// Sub-seed offsets for data generation, the train/test split and the scenario.
pub const DATA_SEED: u64 = 1;
pub const SPLIT_SEED: u64 = 2;
pub const SCENARIO_SEED: u64 = 3;

#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    pub overwrite: bool,
}

/// Inputs of one seeded run.
#[derive(Debug, Clone)]
pub struct SeedData {
    pub train: Dataset,
    pub test: Dataset,
    pub sequence: TaskSequence,
}

#[derive(Debug, Clone)]
pub struct SeedResult {
    pub seed: u64,
    pub dir: PathBuf,
    pub average_incremental_accuracy: f64,
    pub rows: Vec<ResultRow>,
}

#[derive(Debug, Clone)]
pub struct Summary {
    pub output_dir: PathBuf,
    pub seeds: Vec<SeedResult>,
    pub mean: f64,
    pub std: f64,
    /// The summary.csv data row, without a trailing newline.
    pub row: String,
}

pub(crate) fn scenario_name(kind: ScenarioKind) -> &'static str {
    match kind {
        ScenarioKind::Ordered => "ordered",
        ScenarioKind::Shuffled => "shuffled",
        ScenarioKind::Conventional => "conventional",
    }
}

/// Dataset, split and task sequence for `seed`.
pub fn prepare_seed(cfg: &ExperimentConfig, seed: u64) -> Result<SeedData> {
    let split_seed = derive_seed(seed, &[SPLIT_SEED]);
    let (train, test) = match &cfg.dataset {
        &DatasetSpec::Synthetic {
            num_classes,
            per_class,
            feature_dim,
            cluster_spread,
        } => {
            let ds = generate_synthetic(num_classes, per_class, feature_dim, cluster_spread, derive_seed(seed, &[DATA_SEED]))?;
            split_train_test(&ds, cfg.test_per_class, split_seed)?
        }
        DatasetSpec::Csv { path, test_path } => {
            let ds = load_csv(path, None)?;
            match test_path {
                Some(tp) => {
                    let test = load_csv(tp, Some(ds.feature_dim()))?;
                    if test.num_classes() != ds.num_classes() {
                        return Err(Error::Format(format!(
                            "test file has {} classes, training file {}",
                            test.num_classes(),
                            ds.num_classes()
                        )));
                    }
                    (ds, test)
                }
                None => split_train_test(&ds, cfg.test_per_class, split_seed)?,
            }
        }
    };
    let s = &cfg.scenario;
    let classes = train.num_classes();
    let base = s.base_classes.unwrap_or_else(|| default_base_classes(classes));
    let scenario_seed = derive_seed(seed, &[SCENARIO_SEED]);
    let sequence = match s.kind {
        ScenarioKind::Conventional => build_conventional(&train, s.num_tasks, base, s.n_max, scenario_seed)?,
        ScenarioKind::Ordered => {
            build_ordered(&train, &make_profile(classes, s.n_max, s.rho)?, s.num_tasks, base, scenario_seed)?
        }
        ScenarioKind::Shuffled => {
            build_shuffled(&train, &make_profile(classes, s.n_max, s.rho)?, s.num_tasks, base, scenario_seed)?
        }
    };
    Ok(SeedData { train, test, sequence })
}

pub fn build_model_settings(cfg: &ExperimentConfig) -> RunSettings {
    RunSettings {
        hidden: cfg.model.hidden.clone(),
        head_kind: cfg.model.head,
        train: cfg.train_config(),
        two_stage: cfg.two_stage,
        predictor: cfg.predictor,
        memory_budget: cfg.memory.budget(),
        selection: cfg.memory.selection,
    }
}

fn is_nonempty_dir(path: &Path) -> Result<bool> {
    match fs::read_dir(path) {
        Ok(mut entries) => Ok(entries.next().is_some()),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(false),
        Err(e) if e.kind() == std::io::ErrorKind::NotADirectory => Ok(true),
        Err(e) => Err(Error::io(path, e)),
    }
}

fn write_log(dir: &Path, log: &RunLog) -> Result<Vec<ResultRow>> {
    write_file(&dir.join("run_log.json"), &serde_json::to_string_pretty(log)?)?;
    let rows = results_rows(log)?;
    write_file(&dir.join("results.csv"), &results_csv(&rows))?;
    write_file(&dir.join("per_class_accuracy.csv"), &per_class_csv(log))?;
    write_file(&dir.join("lws_weights.csv"), &lws_csv(log))?;
    Ok(rows)
}

fn run_seed(cfg: &ExperimentConfig, seed: u64, dir: &Path) -> Result<SeedResult> {
    let data = prepare_seed(cfg, seed)?;
    write_file(&dir.join("manifest.json"), &serde_json::to_string_pretty(&data.sequence)?)?;
    let snapshot = serde_json::to_value(cfg)?;
    let settings = build_model_settings(cfg);
    match run_incremental(&data.sequence, &data.train, &data.test, &settings, seed, snapshot, &mut NoopObserver) {
        Ok(outcome) => {
            let rows = write_log(dir, &outcome.log)?;
            if cfg.save_model {
                outcome.model.save_checkpoint(dir.join("model_final.json"))?;
            }
            info!(
                "seed {seed}: average incremental accuracy {:.4}",
                outcome.log.average_incremental_accuracy
            );
            Ok(SeedResult {
                seed,
                dir: dir.to_path_buf(),
                average_incremental_accuracy: outcome.log.average_incremental_accuracy,
                rows,
            })
        }
        Err(failure) => {
            warn!("seed {seed}: {failure}; writing partial outputs");
            if let Err(e) = write_log(dir, &failure.log) {
                warn!("seed {seed}: could not flush partial outputs: {e}");
            }
            Err(failure.error)
        }
    }
}

/// Runs every seed (in parallel, one thread each), then writes `summary.csv`.
pub fn run_experiment(cfg: &ExperimentConfig, options: RunOptions) -> Result<Summary> {
    cfg.validate()?;
    let out = cfg.resolved_output_dir();
    if !options.overwrite && is_nonempty_dir(&out)? {
        return Err(Error::config(
            "output_dir",
            format!("{} already exists and is not empty; pass --overwrite to reuse it", out.display()),
        ));
    }
    fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;

    let results: Vec<Result<SeedResult>> = std::thread::scope(|scope| {
        let handles: Vec<_> = cfg
            .seeds
            .iter()
            .map(|&seed| {
                let dir = out.join(format!("seed_{seed}"));
                scope.spawn(move || run_seed(cfg, seed, &dir))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|_| Err(Error::State("a seed worker panicked".into()))))
            .collect()
    });
    let seeds = results.into_iter().collect::<Result<Vec<_>>>()?;

    let values: Vec<f64> = seeds.iter().map(|s| s.average_incremental_accuracy).collect();
    let (mean, std) = mean_std(&values);
    let row = format!(
        "{},{},{},{},{},{},{}",
        scenario_name(cfg.scenario.kind),
        cfg.strategy.name(),
        cfg.two_stage,
        format_real(cfg.scenario.rho),
        format_real(mean),
        format_real(std),
        seeds.len()
    );
    write_file(&out.join("summary.csv"), &format!("{SUMMARY_HEADER}\n{row}\n"))?;
    Ok(Summary {
        output_dir: out,
        seeds,
        mean,
        std,
        row,
    })
}
