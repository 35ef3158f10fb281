//! Evaluation quantities.
//!
//! Average accuracy after a task is the unweighted mean of per-class
//! accuracies over every class seen so far; on a class-balanced test set it
//! equals plain sample accuracy. Average incremental accuracy is the mean of
//! those per-task values.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{IncrementalModel, Predictor};
use crate::training::LossReport;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskEval {
    pub task_id: usize,
    pub per_class_accuracy: BTreeMap<usize, f64>,
    pub average_accuracy: f64,
    pub num_seen_classes: usize,
}

/// Raw test predictions after one task; every metric can be recomputed from it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictionDump {
    pub task_id: usize,
    pub indices: Vec<usize>,
    pub labels: Vec<usize>,
    pub predicted: Vec<usize>,
}

impl PredictionDump {
    /// Fraction of correctly predicted test examples.
    pub fn sample_accuracy(&self) -> f64 {
        let correct = self.labels.iter().zip(&self.predicted).filter(|(a, b)| a == b).count();
        correct as f64 / self.labels.len().max(1) as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeadTail {
    pub head_mean: f64,
    pub tail_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LwsRecord {
    pub task_id: usize,
    pub classes: Vec<usize>,
    pub weights: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskLosses {
    pub task_id: usize,
    pub stage1: Vec<LossReport>,
    pub stage2: Vec<LossReport>,
}

/// Everything recorded about one seeded run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub config: Value,
    pub seed: u64,
    pub tasks: Vec<TaskEval>,
    pub average_incremental_accuracy: f64,
    pub class_counts: BTreeMap<usize, usize>,
    pub lws_dump: Vec<LwsRecord>,
    pub memory_dump: BTreeMap<usize, Vec<usize>>,
    pub losses: Vec<TaskLosses>,
    pub predictions: Vec<PredictionDump>,
    pub wall_time: f64,
}

impl RunLog {
    pub fn new(config: Value, seed: u64, class_counts: BTreeMap<usize, usize>) -> Self {
        Self {
            config,
            seed,
            tasks: Vec::new(),
            average_incremental_accuracy: f64::NAN,
            class_counts,
            lws_dump: Vec::new(),
            memory_dump: BTreeMap::new(),
            losses: Vec::new(),
            predictions: Vec::new(),
            wall_time: 0.0,
        }
    }

    /// Recomputes the averages from the stored task evaluations.
    pub fn finalize(&mut self) {
        self.average_incremental_accuracy = average_incremental(&self.tasks).unwrap_or(f64::NAN);
    }
}

/// Runs `predictor` over the test examples of `seen_classes`.
pub fn predict_test(
    model: &IncrementalModel,
    test: &Dataset,
    task_id: usize,
    seen_classes: &[usize],
    predictor: Predictor,
) -> Result<PredictionDump> {
    let mut indices = Vec::new();
    for &c in seen_classes {
        let ids = test.class_indices(c);
        if ids.is_empty() {
            return Err(Error::Evaluation(format!("seen class {c} has no test examples")));
        }
        indices.extend_from_slice(ids);
    }
    indices.sort_unstable();
    let x = test.features_of(&indices)?;
    let labels = test.labels_of(&indices)?;
    let predicted = model.predict(&x, predictor)?;
    Ok(PredictionDump {
        task_id,
        indices,
        labels,
        predicted,
    })
}

/// Per-class tallies over a prediction dump.
pub fn task_eval_from_predictions(dump: &PredictionDump, seen_classes: &[usize]) -> Result<TaskEval> {
    let seen: BTreeSet<usize> = seen_classes.iter().copied().collect();
    let mut tally: BTreeMap<usize, (usize, usize)> = seen.iter().map(|&c| (c, (0, 0))).collect();
    for (&label, &pred) in dump.labels.iter().zip(&dump.predicted) {
        let entry = tally
            .get_mut(&label)
            .ok_or_else(|| Error::Evaluation(format!("test label {label} is not a seen class")))?;
        entry.1 += 1;
        if label == pred {
            entry.0 += 1;
        }
    }
    let mut per_class_accuracy = BTreeMap::new();
    for (c, (correct, total)) in tally {
        if total == 0 {
            return Err(Error::Evaluation(format!("seen class {c} has no test examples")));
        }
        per_class_accuracy.insert(c, correct as f64 / total as f64);
    }
    let average_accuracy = per_class_accuracy.values().sum::<f64>() / per_class_accuracy.len() as f64;
    Ok(TaskEval {
        task_id: dump.task_id,
        num_seen_classes: per_class_accuracy.len(),
        per_class_accuracy,
        average_accuracy,
    })
}

pub fn evaluate_task(
    model: &IncrementalModel,
    test: &Dataset,
    task_id: usize,
    seen_classes: &[usize],
    predictor: Predictor,
) -> Result<TaskEval> {
    let dump = predict_test(model, test, task_id, seen_classes, predictor)?;
    task_eval_from_predictions(&dump, seen_classes)
}

pub fn average_incremental(evals: &[TaskEval]) -> Result<f64> {
    if evals.is_empty() {
        return Err(Error::Parameter("average incremental accuracy of zero tasks".into()));
    }
    Ok(evals.iter().map(|e| e.average_accuracy).sum::<f64>() / evals.len() as f64)
}

/// Splits the seen classes at the median training count and averages each half.
///
/// Classes are ranked by count (descending, ties by class id); the first
/// ⌈n/2⌉ form the head. With a single class the tail is empty and reported
/// equal to the head.
pub fn head_tail_breakdown(eval: &TaskEval, class_counts: &BTreeMap<usize, usize>) -> Result<HeadTail> {
    let mut ranked: Vec<(usize, usize)> = eval
        .per_class_accuracy
        .keys()
        .map(|&c| {
            class_counts
                .get(&c)
                .map(|&n| (n, c))
                .ok_or_else(|| Error::Evaluation(format!("no training count for class {c}")))
        })
        .collect::<Result<_>>()?;
    ranked.sort_unstable_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    let split = ranked.len().div_ceil(2);
    let mean = |part: &[(usize, usize)]| {
        part.iter().map(|(_, c)| eval.per_class_accuracy[c]).sum::<f64>() / part.len() as f64
    };
    let head_mean = mean(&ranked[..split]);
    let tail_mean = if split == ranked.len() {
        head_mean
    } else {
        mean(&ranked[split..])
    };
    Ok(HeadTail { head_mean, tail_mean })
}
