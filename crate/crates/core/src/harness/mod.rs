//! Experiment orchestration: JSON configuration, per-seed pipelines,
//! result tables and sweeps.
//!
//! Every seed writes into `output_dir/seed_<s>/`; the experiment root gets a
//! `summary.csv` with one row per configuration. Reals in every CSV use 17
//! significant digits so files compare byte-for-byte across reruns.

mod config;
mod experiment;
mod outputs;
mod sweep;

pub use config::{
    parse_config, parse_config_str, DatasetSpec, ExperimentConfig, MemoryMode, MemorySpec, ModelSpec, ScenarioSpec,
    OUTPUT_ROOT_ENV,
};
pub use experiment::{
    build_model_settings, prepare_seed, run_experiment, RunOptions, SeedData, SeedResult, Summary, DATA_SEED,
    SCENARIO_SEED, SPLIT_SEED,
};
pub use outputs::{read_csv_records, results_rows, ResultRow, LWS_HEADER, PER_CLASS_HEADER, RESULTS_HEADER, SUMMARY_HEADER};
pub use sweep::{sweep, SweepAxis, SWEEP_SUMMARY_HEADER};
