use std::fmt::Write as _;
use std::fs;
use std::str::FromStr;

use crate::data::format_real;
use crate::error::{Error, Result};

use super::config::ExperimentConfig;
use super::experiment::{run_experiment, RunOptions, Summary};
use super::outputs::{write_file, SUMMARY_HEADER};

pub const SWEEP_SUMMARY_HEADER: &str =
    "axis,value,scenario,strategy,two_stage,rho,avg_incremental_mean,avg_incremental_std,num_seeds";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    Rho,
    MemoryBudget,
    NumTasks,
}

impl SweepAxis {
    pub fn name(&self) -> &'static str {
        match self {
            SweepAxis::Rho => "rho",
            SweepAxis::MemoryBudget => "memory_budget",
            SweepAxis::NumTasks => "num_tasks",
        }
    }

    /// A copy of `cfg` with this axis set to `value` and its own output directory.
    fn apply(&self, cfg: &ExperimentConfig, value: &str) -> Result<(ExperimentConfig, String)> {
        let bad = |msg: String| Error::config(format!("sweep.{}", self.name()), msg);
        let mut out = cfg.clone();
        let label = match self {
            SweepAxis::Rho => {
                let v: f64 = value.trim().parse().map_err(|_| bad(format!("`{value}` is not a number")))?;
                out.scenario.rho = v;
                format_real(v)
            }
            SweepAxis::MemoryBudget => {
                let v: usize = value.trim().parse().map_err(|_| bad(format!("`{value}` is not a count")))?;
                out.memory.budget = v;
                v.to_string()
            }
            SweepAxis::NumTasks => {
                let v: usize = value.trim().parse().map_err(|_| bad(format!("`{value}` is not a count")))?;
                out.scenario.num_tasks = v;
                v.to_string()
            }
        };
        out.validate()?;
        out.output_dir = cfg.output_dir.join(format!("{}_{}", self.name(), value.trim()));
        Ok((out, label))
    }
}

impl FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rho" => Ok(SweepAxis::Rho),
            "memory_budget" => Ok(SweepAxis::MemoryBudget),
            "num_tasks" => Ok(SweepAxis::NumTasks),
            other => Err(Error::config(
                "sweep.axis",
                format!("unknown axis `{other}`; expected rho, memory_budget or num_tasks"),
            )),
        }
    }
}

/// One experiment per value, each in `output_dir/<axis>_<value>/`, with a
/// combined `sweep_summary.csv` at the root. All values are validated before
/// anything runs.
pub fn sweep(cfg: &ExperimentConfig, axis: SweepAxis, values: &[String], options: RunOptions) -> Result<Vec<Summary>> {
    if values.is_empty() {
        return Err(Error::config("sweep.values", "must list at least one value"));
    }
    let planned = values
        .iter()
        .map(|v| axis.apply(cfg, v))
        .collect::<Result<Vec<_>>>()?;
    let root = cfg.resolved_output_dir();
    let summary_path = root.join("sweep_summary.csv");
    if !options.overwrite && summary_path.exists() {
        return Err(Error::config(
            "output_dir",
            format!("{} already exists; pass --overwrite to replace it", summary_path.display()),
        ));
    }
    let mut text = String::from(SWEEP_SUMMARY_HEADER);
    text.push('\n');
    let mut summaries = Vec::with_capacity(planned.len());
    for (sub, label) in planned {
        let summary = run_experiment(&sub, options)?;
        let _ = writeln!(text, "{},{},{}", axis.name(), label, summary.row);
        summaries.push(summary);
    }
    fs::create_dir_all(&root).map_err(|e| Error::io(&root, e))?;
    write_file(&summary_path, &text)?;
    debug_assert!(SWEEP_SUMMARY_HEADER.ends_with(SUMMARY_HEADER));
    Ok(summaries)
}
