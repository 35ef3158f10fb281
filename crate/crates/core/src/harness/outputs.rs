use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::data::format_real;
use crate::error::{Error, Result};
use crate::metrics::{head_tail_breakdown, RunLog};

pub const RESULTS_HEADER: &str = "seed,task_id,num_seen_classes,average_accuracy,head_mean,tail_mean";
pub const SUMMARY_HEADER: &str =
    "scenario,strategy,two_stage,rho,avg_incremental_mean,avg_incremental_std,num_seeds";
pub const LWS_HEADER: &str = "task_id,class_id,weight";
pub const PER_CLASS_HEADER: &str = "task_id,class_id,train_count,accuracy";

#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub seed: u64,
    pub task_id: usize,
    pub num_seen_classes: usize,
    pub average_accuracy: f64,
    pub head_mean: f64,
    pub tail_mean: f64,
}

pub fn results_rows(log: &RunLog) -> Result<Vec<ResultRow>> {
    log.tasks
        .iter()
        .map(|eval| {
            let ht = head_tail_breakdown(eval, &log.class_counts)?;
            Ok(ResultRow {
                seed: log.seed,
                task_id: eval.task_id,
                num_seen_classes: eval.num_seen_classes,
                average_accuracy: eval.average_accuracy,
                head_mean: ht.head_mean,
                tail_mean: ht.tail_mean,
            })
        })
        .collect()
}

pub(crate) fn results_csv(rows: &[ResultRow]) -> String {
    let mut out = String::from(RESULTS_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.seed,
            r.task_id,
            r.num_seen_classes,
            format_real(r.average_accuracy),
            format_real(r.head_mean),
            format_real(r.tail_mean)
        );
    }
    out
}

pub(crate) fn lws_csv(log: &RunLog) -> String {
    let mut out = String::from(LWS_HEADER);
    out.push('\n');
    for rec in &log.lws_dump {
        for (c, w) in rec.classes.iter().zip(&rec.weights) {
            let _ = writeln!(out, "{},{},{}", rec.task_id, c, format_real(*w));
        }
    }
    out
}

pub(crate) fn per_class_csv(log: &RunLog) -> String {
    let mut out = String::from(PER_CLASS_HEADER);
    out.push('\n');
    for eval in &log.tasks {
        for (c, acc) in &eval.per_class_accuracy {
            let count = log.class_counts.get(c).copied().unwrap_or(0);
            let _ = writeln!(out, "{},{},{},{}", eval.task_id, c, count, format_real(*acc));
        }
    }
    out
}

/// Population mean and standard deviation.
pub(crate) fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

pub(crate) fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Splits a CSV with a header into maps from column name to value.
pub fn read_csv_records(text: &str) -> Result<Vec<BTreeMap<String, String>>> {
    let mut lines = text.lines();
    let header: Vec<&str> = lines
        .next()
        .ok_or_else(|| Error::Format("empty CSV".into()))?
        .split(',')
        .collect();
    lines
        .enumerate()
        .map(|(i, line)| {
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != header.len() {
                return Err(Error::Parse {
                    line: i + 2,
                    message: format!("{} fields, header has {}", fields.len(), header.len()),
                });
            }
            Ok(header.iter().map(|h| h.to_string()).zip(fields.into_iter().map(String::from)).collect())
        })
        .collect()
}
