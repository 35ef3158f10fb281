use std::collections::BTreeMap;
use std::fmt;
use std::time::Instant;

use log::info;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::memory::{ExemplarMemory, MemoryBudget, Selection};
use crate::metrics::{predict_test, task_eval_from_predictions, LwsRecord, RunLog, TaskEval, TaskLosses};
use crate::model::{HeadKind, IncrementalModel, Predictor};
use crate::rng::derive_seed;
use crate::scenario::{Task, TaskSequence};

use super::config::TrainConfig;
use super::stage::{train_stage1, train_stage2};

/// Sub-seed offsets derived from a run's master seed.
pub const INIT_SEED: u64 = 10;
pub const HEAD_SEED: u64 = 11;
pub const SAMPLER_SEED: u64 = 12;
pub const MEMORY_SEED: u64 = 13;

/// Everything `run_incremental` needs besides the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSettings {
    /// Hidden layer widths of the extractor; empty means identity features.
    pub hidden: Vec<usize>,
    pub head_kind: HeadKind,
    pub train: TrainConfig,
    pub two_stage: bool,
    pub predictor: Predictor,
    pub memory_budget: MemoryBudget,
    pub selection: Selection,
}

/// Hooks into the task loop. Every method is called with the model in the
/// state the name describes.
pub trait RunObserver {
    fn stage1_finished(&mut self, _task: &Task, _model: &IncrementalModel) {}
    fn stage2_finished(&mut self, _task: &Task, _model: &IncrementalModel) {}
    fn task_finished(&mut self, _task: &Task, _model: &IncrementalModel, _eval: &TaskEval) {}
}

pub struct NoopObserver;

impl RunObserver for NoopObserver {}

/// A run that stopped early, with whatever was logged before the failure.
#[derive(Debug)]
pub struct RunFailure {
    pub log: Box<RunLog>,
    pub model: Option<Box<IncrementalModel>>,
    pub error: Error,
}

impl fmt::Display for RunFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "run failed after {} task(s): {}", self.log.tasks.len(), self.error)
    }
}

impl std::error::Error for RunFailure {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

/// A finished run: the log and the final model.
#[derive(Debug)]
pub struct RunOutcome {
    pub log: RunLog,
    pub model: IncrementalModel,
}

/// The class-incremental loop: for every task add a head, run stage 1, run
/// stage 2 if enabled, update the memory with the deployed model's features,
/// keep a frozen copy for distillation and evaluate on every seen class.
pub fn run_incremental(
    sequence: &TaskSequence,
    train: &Dataset,
    test: &Dataset,
    settings: &RunSettings,
    seed: u64,
    config_snapshot: Value,
    observer: &mut dyn RunObserver,
) -> std::result::Result<RunOutcome, RunFailure> {
    let started = Instant::now();
    let mut log = RunLog::new(config_snapshot, seed, sequence.class_counts.clone());
    let mut model = None;
    match drive(sequence, train, test, settings, seed, observer, &mut log, &mut model) {
        Ok(()) => {
            log.finalize();
            log.wall_time = started.elapsed().as_secs_f64();
            Ok(RunOutcome {
                log,
                model: model.expect("model exists after a successful run"),
            })
        }
        Err(error) => {
            log.finalize();
            log.wall_time = started.elapsed().as_secs_f64();
            Err(RunFailure {
                log: Box::new(log),
                model: model.map(Box::new),
                error,
            })
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn drive(
    sequence: &TaskSequence,
    train: &Dataset,
    test: &Dataset,
    settings: &RunSettings,
    seed: u64,
    observer: &mut dyn RunObserver,
    log: &mut RunLog,
    slot: &mut Option<IncrementalModel>,
) -> Result<()> {
    sequence.validate(train)?;
    if test.feature_dim() != train.feature_dim() {
        return Err(Error::Dimension(format!(
            "train features have {} dimensions, test features {}",
            train.feature_dim(),
            test.feature_dim()
        )));
    }
    let mut cfg = settings.train.clone();
    cfg.seed = derive_seed(seed, &[SAMPLER_SEED]);
    cfg.validate()?;

    let mut arch = vec![train.feature_dim()];
    arch.extend_from_slice(&settings.hidden);
    let model = slot.insert(IncrementalModel::new(
        arch,
        settings.head_kind,
        derive_seed(seed, &[INIT_SEED]),
    )?);
    let mut memory = ExemplarMemory::new(settings.memory_budget, settings.selection, derive_seed(seed, &[MEMORY_SEED]));
    let mut old_model: Option<IncrementalModel> = None;

    for task in &sequence.tasks {
        let t = task.task_id;
        model.add_task_head(&task.classes, derive_seed(seed, &[HEAD_SEED, t as u64]))?;
        let stage1 = train_stage1(model, train, task, &memory, old_model.as_ref(), &cfg)?;
        observer.stage1_finished(task, model);
        let stage2 = if settings.two_stage {
            let history = train_stage2(model, train, task, &memory, &cfg)?;
            observer.stage2_finished(task, model);
            history
        } else {
            Vec::new()
        };
        log.losses.push(TaskLosses { task_id: t, stage1, stage2 });

        let deployed = &*model;
        memory.update_after_task(train, task, |x| deployed.features(x))?;
        if settings.predictor == Predictor::Ncm {
            let mut inputs = BTreeMap::new();
            for (&c, ids) in memory.dump() {
                inputs.insert(c, train.features_of(ids)?);
            }
            model.set_class_means_from(&inputs)?;
        }
        old_model = Some(model.clone());

        let seen = sequence.classes_through(t);
        let dump = predict_test(model, test, t, &seen, settings.predictor)?;
        let eval = task_eval_from_predictions(&dump, &seen)?;
        if let Some(weights) = model.lws() {
            log.lws_dump.push(LwsRecord {
                task_id: t,
                classes: model.classes().to_vec(),
                weights: weights.to_vec(),
            });
        }
        info!(
            "task {t}: {} classes seen, average accuracy {:.4}",
            eval.num_seen_classes, eval.average_accuracy
        );
        observer.task_finished(task, model, &eval);
        log.tasks.push(eval);
        log.predictions.push(dump);
        log.memory_dump = memory.dump().clone();
    }
    Ok(())
}
