use std::collections::BTreeMap;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::memory::ExemplarMemory;
use crate::model::IncrementalModel;
use crate::numerics::{sgd_step, Matrix, ParamHost};
use crate::rng::derive_seed;
use crate::scenario::Task;

use super::config::{AuxLoss, TrainConfig};
use super::loss::{cross_entropy, feature_distill, logit_distill, LossReport};
use super::sampler::{class_balanced_batches, instance_balanced_batches};

const STAGE1_STREAM: u64 = 1;
const STAGE2_STREAM: u64 = 2;

/// Old-model outputs for every example of a stage-1 pool, computed once
/// before training so they stay fixed across epochs.
#[derive(Debug, Clone, PartialEq)]
pub struct Stage1Targets {
    rows: BTreeMap<usize, usize>,
    logits: Matrix,
    features: Matrix,
}

impl Stage1Targets {
    pub fn compute(old: &IncrementalModel, train: &Dataset, pool: &[usize]) -> Result<Self> {
        let x = train.features_of(pool)?;
        Ok(Self {
            rows: pool.iter().enumerate().map(|(r, &id)| (id, r)).collect(),
            logits: old.forward_logits(&x)?,
            features: old.features(&x)?,
        })
    }

    pub fn logits(&self) -> &Matrix {
        &self.logits
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    fn rows_of(&self, ids: &[usize]) -> Result<Vec<usize>> {
        ids.iter()
            .map(|id| {
                self.rows
                    .get(id)
                    .copied()
                    .ok_or_else(|| Error::Contract(format!("example {id} has no distillation target")))
            })
            .collect()
    }
}

fn target_columns(model: &IncrementalModel, train: &Dataset, ids: &[usize]) -> Result<Vec<usize>> {
    ids.iter()
        .map(|&id| {
            let label = train.label_of(id)?;
            model
                .column_of(label)
                .ok_or_else(|| Error::Contract(format!("class {label} has no output column")))
        })
        .collect()
}

fn apply_weight_decay(model: &mut IncrementalModel, weight_decay: f64) {
    if weight_decay == 0.0 {
        return;
    }
    for i in 0..model.num_params() {
        let p = model.param_mut(i);
        if p.trainable {
            let value = p.value.data().to_vec();
            for (g, v) in p.grad.data_mut().iter_mut().zip(value) {
                *g += weight_decay * v;
            }
        }
    }
}

fn pool_for(task: &Task, memory: &ExemplarMemory) -> Vec<usize> {
    let mut pool = task.examples.clone();
    pool.extend(memory.all_indices());
    pool.sort_unstable();
    pool.dedup();
    pool
}

/// Stage 1: cross-entropy over the task data and the memory plus the
/// configured auxiliary term, instance-balanced batches, stepped learning
/// rate. Returns one epoch-averaged report per epoch.
pub fn train_stage1(
    model: &mut IncrementalModel,
    train: &Dataset,
    task: &Task,
    memory: &ExemplarMemory,
    old_model: Option<&IncrementalModel>,
    cfg: &TrainConfig,
) -> Result<Vec<LossReport>> {
    cfg.validate()?;
    if model.lws().is_some() {
        return Err(Error::State("stage 1 started with an LWS vector attached".into()));
    }
    let pool = pool_for(task, memory);
    let targets = match (cfg.aux, old_model) {
        (AuxLoss::None, _) | (_, None) => None,
        (_, Some(old)) if old.num_classes() == 0 => None,
        (_, Some(old)) => Some((old.num_classes(), Stage1Targets::compute(old, train, &pool)?)),
    };
    let c_new = task.classes.len();
    let seed = derive_seed(cfg.seed, &[STAGE1_STREAM, task.task_id as u64]);
    model.reset_velocities();
    model.zero_grads();

    let mut history = Vec::with_capacity(cfg.epochs_stage1);
    for epoch in 0..cfg.epochs_stage1 {
        let lr = cfg.lr_at(epoch);
        let mut steps = Vec::new();
        for batch in instance_balanced_batches(&pool, cfg.batch_size, seed, epoch)? {
            let x = train.features_of(&batch)?;
            let cols = target_columns(model, train, &batch)?;
            let (out, cache) = model.forward_train(&x, false)?;
            let (ce, mut grad) = cross_entropy(&out, &cols)?;
            let mut aux = 0.0;
            let mut grad_features = None;
            if let Some((c_old, t)) = &targets {
                let rows = t.rows_of(&batch)?;
                match cfg.aux {
                    AuxLoss::LogitDistill { temperature } => {
                        let old = t.logits.select_rows(&rows);
                        let (l, g) = logit_distill(&out.columns(0, *c_old)?, &old, temperature)?;
                        aux = l;
                        for r in 0..grad.rows() {
                            for (dst, src) in grad.row_mut(r).iter_mut().zip(g.row(r)) {
                                *dst += src;
                            }
                        }
                    }
                    AuxLoss::FeatureDistill { lambda_base } => {
                        let old = t.features.select_rows(&rows);
                        let (l, g) = feature_distill(cache.features(), &old, lambda_base, *c_old, c_new)?;
                        aux = l;
                        grad_features = Some(g);
                    }
                    AuxLoss::None => {}
                }
            }
            model.backward(&cache, &grad, grad_features.as_ref())?;
            apply_weight_decay(model, cfg.weight_decay);
            sgd_step(model, lr, cfg.momentum);
            steps.push(LossReport::new(ce, aux));
        }
        let report = LossReport::mean(&steps);
        if !report.total.is_finite() {
            return Err(Error::State(format!(
                "stage 1 loss diverged at task {} epoch {epoch}",
                task.task_id
            )));
        }
        history.push(report);
    }
    Ok(history)
}

/// Per-class pools of the task data and the memory over every class the model knows.
pub(crate) fn stage2_pools(
    model: &IncrementalModel,
    train: &Dataset,
    task: &Task,
    memory: &ExemplarMemory,
) -> Result<BTreeMap<usize, Vec<usize>>> {
    let mut pools: BTreeMap<usize, Vec<usize>> = model.classes().iter().map(|&c| (c, Vec::new())).collect();
    for id in pool_for(task, memory) {
        let label = train.label_of(id)?;
        pools
            .get_mut(&label)
            .ok_or_else(|| Error::Contract(format!("example {id} has class {label} outside the model")))?
            .push(id);
    }
    Ok(pools)
}

/// Stage 2: freezes everything but the newest head, attaches LWS and trains
/// both with plain cross-entropy on scaled outputs under class-balanced
/// sampling. `aux` is always reported as zero.
pub fn train_stage2(
    model: &mut IncrementalModel,
    train: &Dataset,
    task: &Task,
    memory: &ExemplarMemory,
    cfg: &TrainConfig,
) -> Result<Vec<LossReport>> {
    cfg.validate()?;
    let pools = stage2_pools(model, train, task, memory)?;
    let pooled: usize = pools.values().map(Vec::len).sum();
    let steps = pooled.div_ceil(cfg.batch_size).max(1);
    model.freeze_for_stage2()?;
    model.reset_velocities();
    model.zero_grads();
    let mut history = Vec::with_capacity(cfg.epochs_stage2);
    for epoch in 0..cfg.epochs_stage2 {
        let seed = derive_seed(cfg.seed, &[STAGE2_STREAM, task.task_id as u64, epoch as u64]);
        let mut reports = Vec::with_capacity(steps);
        for batch in class_balanced_batches(&pools, cfg.batch_size, steps, seed)? {
            let x = train.features_of(&batch)?;
            let cols = target_columns(model, train, &batch)?;
            let (out, cache) = model.forward_train(&x, true)?;
            let (ce, grad) = cross_entropy(&out, &cols)?;
            model.backward(&cache, &grad, None)?;
            apply_weight_decay(model, cfg.weight_decay);
            sgd_step(model, cfg.lr_stage2, cfg.momentum);
            reports.push(LossReport::new(ce, 0.0));
        }
        let report = LossReport::mean(&reports);
        if !report.total.is_finite() {
            return Err(Error::State(format!(
                "stage 2 loss diverged at task {} epoch {epoch}",
                task.task_id
            )));
        }
        history.push(report);
    }
    Ok(history)
}
