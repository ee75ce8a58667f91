//! Differentiable task grouping: learnable assignment scores, the relaxed
//! categorical sample that masks a task-by-group loss matrix, the branched
//! model, joint one-shot training, and hard-partition extraction.

mod checkpoint;
mod gumbel;
mod model;
mod partition;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use gumbel::{gumbel_from_uniform, gumbel_softmax, sample_gumbel, TemperatureSchedule};
pub use model::{count_complexity, Arch, ComplexityCounts, GroupModel, NaiveInit};
pub use partition::Partition;
pub use train::{
    extract_partition, masked_loss, pretrain_naive, train_fixed, train_one_shot,
    AssignmentMatrix, EpochRecord, InitWeights, TrainBudget, TrainHistory, TrainOutcome,
};

use thiserror::Error;

use crate::autodiff::AutodiffError;

#[derive(Debug, Error)]
pub enum GroupingError {
    #[error("temperature must be strictly positive, got {0}")]
    NonPositiveTau(f64),
    #[error("bad temperature schedule: {0}")]
    BadSchedule(String),
    #[error("noise shape {}x{} does not match scores {}x{}", g.0, g.1, s.0, s.1)]
    NoiseShape { s: (usize, usize), g: (usize, usize) },
    #[error("task {task} assigned label {label}, but only {k} groups exist")]
    LabelOutOfRange { task: usize, label: usize, k: usize },
    #[error("assignment must cover at least one task")]
    EmptyAssignment,
    #[error("cannot parse partition string {0:?}")]
    BadPartitionString(String),
    #[error("architecture needs shared_layers < depth (got {shared} vs {depth})")]
    BadArch { shared: usize, depth: usize },
    #[error("model expects {expected} tasks, suite provides {got}")]
    TaskCount { expected: usize, got: usize },
    #[error("branch {group} has no head for task {task}")]
    HeadMissing { group: usize, task: usize },
    #[error("non-finite loss at epoch {epoch} (tau {tau}, max|S| {max_abs_s}): {source}")]
    NanLoss {
        epoch: usize,
        tau: f64,
        max_abs_s: f64,
        source: AutodiffError,
    },
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Suite(#[from] crate::tasksuite::SuiteError),
    #[error("relaxed sample row {row} sums to {sum}, outside tolerance")]
    SimplexViolation { row: usize, sum: f64 },
    #[error("checkpoint io: {0}")]
    CheckpointIo(#[from] std::io::Error),
    #[error("checkpoint encoding: {0}")]
    CheckpointJson(#[from] serde_json::Error),
    #[error("unsupported checkpoint version {0}")]
    CheckpointVersion(u32),
}
