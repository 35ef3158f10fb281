//! Two-stage incremental training.
//!
//! Stage 1 minimises cross-entropy over the current task's data plus the
//! exemplar memory, optionally with a distillation term, drawing batches with
//! an instance-balanced sampler. Stage 2 freezes the extractor and the old
//! heads, attaches the LWS vector and retrains the newest head and LWS with
//! cross-entropy alone under a class-balanced sampler.

mod config;
mod loss;
mod run;
mod sampler;
mod stage;

pub use config::{AuxLoss, TrainConfig};
pub use loss::{cross_entropy, feature_distill, logit_distill, LossReport};
pub use run::{run_incremental, NoopObserver, RunFailure, RunObserver, RunOutcome, RunSettings, HEAD_SEED, INIT_SEED, MEMORY_SEED, SAMPLER_SEED};
pub use sampler::{class_balanced_batches, instance_balanced_batches};
pub use stage::{train_stage1, train_stage2, Stage1Targets};
