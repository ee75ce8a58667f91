//! Training loops: naive pretraining, one-shot joint optimization of weights
//! and assignment scores, and fixed-partition training.
//!
//! The learned and fixed paths share one inner loop and differ only in how
//! the mask enters the graph. With one group the learned mask is exactly 1.0
//! and its score gradient is exactly zero, so a one-group joint run and an
//! all-in-one fixed run produce bit-identical traces under the same seed.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{
    adam_step, AdamHyper, AdamState, AutodiffError, Graph, Mat, NodeId, ParamId, ParamSet,
};
use crate::tasksuite::{batch_indices, SplitKind, TaskSuite};

use super::gumbel::{sample_gumbel, TemperatureSchedule};
use super::model::{Arch, GroupModel, NaiveInit};
use super::{GroupingError, Partition};

const TAG_INIT: u64 = 0x11;
const TAG_GUMBEL: u64 = 0x22;
const TAG_SHUFFLE: u64 = 0x33;

fn substream_seed(seed: u64, tag: u64) -> u64 {
    seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Learnable task-to-group scores, one row per task. Initialized uniform:
/// every entry 1/K, so no task prefers any group before training.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct AssignmentMatrix {
    pub id: ParamId,
    pub n_tasks: usize,
    pub k_groups: usize,
}

impl AssignmentMatrix {
    pub fn init_uniform(params: &mut ParamSet, n_tasks: usize, k_groups: usize) -> Self {
        let id = params.insert(
            "assignment",
            Mat::filled(n_tasks, k_groups, 1.0 / k_groups as f64),
        );
        AssignmentMatrix {
            id,
            n_tasks,
            k_groups,
        }
    }

    pub fn scores<'a>(&self, params: &'a ParamSet) -> &'a Mat {
        params.value(self.id)
    }
}

/// Hard readout: each task goes to its argmax-score group, ties broken
/// toward the lowest group index.
pub fn extract_partition(scores: &Mat) -> Partition {
    let labels = (0..scores.rows())
        .map(|i| {
            let row = scores.row(i);
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect();
    Partition::from_labels(labels)
}

/// Sum of the task-by-group losses weighted by the relaxed sample:
/// `sum_ik L_ik * z_ik`. `losses` is row-major (task-major) and must match
/// the shape of `z`.
pub fn masked_loss(
    g: &mut Graph,
    losses: &[NodeId],
    z: NodeId,
) -> Result<NodeId, GroupingError> {
    let (n, k) = (g.value(z).rows(), g.value(z).cols());
    let lmat = g.stack_scalars(losses, n, k)?;
    let prod = g.mul(lmat, z)?;
    Ok(g.sum(prod)?)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainBudget {
    pub epochs: usize,
    pub batch: usize,
    pub hyper: AdamHyper,
    /// Epochs without validation improvement before the learning rate decays.
    pub plateau_patience: usize,
    pub plateau_factor: f64,
    /// Decay never takes the learning rate below this floor. Keeps long
    /// joint runs alive: score migration stalls outright at lr ~ 0.
    pub plateau_min_lr: f64,
}

impl TrainBudget {
    pub fn new(epochs: usize, batch: usize, hyper: AdamHyper) -> Self {
        TrainBudget {
            epochs,
            batch,
            hyper,
            plateau_patience: 5,
            plateau_factor: 0.5,
            plateau_min_lr: hyper.lr / 8.0,
        }
    }
}

/// Per-epoch trace entry. Validation losses are always measured under the
/// hard (argmax) assignment of the moment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Temperature used this epoch; absent for fixed-mask training.
    pub tau: Option<f64>,
    pub lr: f64,
    /// Mean masked training loss over the epoch's steps.
    pub train_loss: f64,
    pub per_task_val_loss: Vec<f64>,
    pub val_total: f64,
}

pub type TrainHistory = Vec<EpochRecord>;

/// Weight initialization for fixed-partition training.
pub enum InitWeights<'a> {
    Scratch { arch: Arch },
    Naive(&'a NaiveInit),
}

/// Everything a finished training run hands back.
pub struct TrainOutcome {
    pub params: ParamSet,
    pub model: GroupModel,
    pub assignment: Option<AssignmentMatrix>,
    /// The frozen assignment of a fixed-mask run; empty for learned runs.
    pub fixed_assignment: Vec<usize>,
    pub history: TrainHistory,
    pub adam: AdamState,
    pub schedule: Option<TemperatureSchedule>,
    pub gumbel_rng: Option<ChaCha12Rng>,
    pub seed: u64,
}

impl TrainOutcome {
    /// Final hard partition: argmax of the trained scores, or the fixed
    /// assignment the run was given.
    pub fn partition(&self) -> Partition {
        match &self.assignment {
            Some(s) => extract_partition(s.scores(&self.params)),
            None => Partition::from_labels(self.fixed_assignment.clone()),
        }
    }

    /// Validation losses of the final epoch.
    pub fn final_val_losses(&self) -> &[f64] {
        &self
            .history
            .last()
            .expect("training runs at least one epoch")
            .per_task_val_loss
    }
}

enum MaskingMode {
    Learned {
        assignment: AssignmentMatrix,
        schedule: TemperatureSchedule,
        rng: ChaCha12Rng,
        per_epoch_noise: bool,
        epoch_noise: Option<Mat>,
    },
    Fixed {
        branch_of_task: Vec<usize>,
    },
}

fn hard_assignment(masking: &MaskingMode, params: &ParamSet) -> Vec<usize> {
    match masking {
        MaskingMode::Learned { assignment, .. } => {
            extract_partition(assignment.scores(params)).labels().to_vec()
        }
        MaskingMode::Fixed { branch_of_task } => branch_of_task.clone(),
    }
}

fn run_training(
    model: &GroupModel,
    params: &mut ParamSet,
    masking: &mut MaskingMode,
    suite: &TaskSuite,
    budget: &TrainBudget,
    seed: u64,
) -> Result<(TrainHistory, AdamState), GroupingError> {
    if model.n_tasks != suite.n_tasks() {
        return Err(GroupingError::TaskCount {
            expected: model.n_tasks,
            got: suite.n_tasks(),
        });
    }
    if let MaskingMode::Learned { schedule, .. } = masking {
        schedule.validate()?;
    }
    let kinds = suite.spec.kinds.clone();
    let shuffle_seed = substream_seed(seed, TAG_SHUFFLE);
    let n_train = suite.split_len(SplitKind::Train);
    let val_indices: Vec<usize> = (0..suite.split_len(SplitKind::Val)).collect();
    let (val_x, val_ys) = suite.gather_batch(SplitKind::Val, &val_indices);

    let mut adam = AdamState::new(params, budget.hyper);
    let mut history = Vec::with_capacity(budget.epochs);
    let mut best_val = f64::INFINITY;
    let mut stale_epochs = 0usize;

    for epoch in 0..budget.epochs {
        let tau = match masking {
            MaskingMode::Learned { schedule, .. } => Some(schedule.tau_at(epoch)),
            MaskingMode::Fixed { .. } => None,
        };
        if let MaskingMode::Learned {
            assignment,
            rng,
            per_epoch_noise,
            epoch_noise,
            ..
        } = &mut *masking
        {
            if *per_epoch_noise {
                *epoch_noise = Some(sample_gumbel(
                    assignment.n_tasks,
                    assignment.k_groups,
                    rng,
                ));
            }
        }
        let mut loss_sum = 0.0;
        let batches = batch_indices(n_train, budget.batch, shuffle_seed, epoch)?;
        let n_steps = batches.len();
        for batch in batches {
            let step = train_step(model, params, masking, suite, &kinds, tau, &batch, &mut adam);
            loss_sum += step.map_err(|e| at_nan(e, epoch, tau, masking, params))?;
        }

        let branch_of_task = hard_assignment(masking, params);
        let per_task_val_loss =
            model.eval_task_losses(params, &val_x, &val_ys, &kinds, &branch_of_task);
        let val_total: f64 = per_task_val_loss.iter().sum();
        history.push(EpochRecord {
            epoch,
            tau,
            lr: adam.hyper.lr,
            train_loss: loss_sum / n_steps as f64,
            per_task_val_loss,
            val_total,
        });

        // Plateau decay watches the masked validation loss (the training
        // objective with noise-free mask), not the hard-assignment readout:
        // the readout jumps around while assignments are still drifting.
        let masked_val = masked_val_loss(model, params, masking, &val_x, &val_ys, &kinds, tau);
        if masked_val < best_val {
            best_val = masked_val;
            stale_epochs = 0;
        } else {
            stale_epochs += 1;
            if stale_epochs >= budget.plateau_patience {
                adam.hyper.lr = (adam.hyper.lr * budget.plateau_factor).max(budget.plateau_min_lr);
                stale_epochs = 0;
            }
        }
    }
    Ok((history, adam))
}

#[allow(clippy::too_many_arguments)]
fn train_step(
    model: &GroupModel,
    params: &mut ParamSet,
    masking: &mut MaskingMode,
    suite: &TaskSuite,
    kinds: &[crate::tasksuite::TaskKind],
    tau: Option<f64>,
    batch: &[usize],
    adam: &mut AdamState,
) -> Result<f64, GroupingError> {
    let (xb, ybs) = suite.gather_batch(SplitKind::Train, batch);
    let mut g = Graph::new();
    let lease = params.lease(&mut g)?;
    let x = g.constant(xb)?;
    let mut targets = Vec::with_capacity(ybs.len());
    for yb in ybs {
        targets.push(g.constant(yb)?);
    }

    let loss_node = match masking {
        MaskingMode::Learned {
            assignment,
            rng,
            epoch_noise,
            ..
        } => {
            let tau = tau.expect("learned masking always has a temperature");
            let noise = match epoch_noise {
                Some(n) => n.clone(),
                None => sample_gumbel(assignment.n_tasks, assignment.k_groups, rng),
            };
            let noise_node = g.constant(noise)?;
            let shifted = g.add(lease.node(assignment.id), noise_node)?;
            let scaled = g.scale(shifted, 1.0 / tau)?;
            let z = g.row_softmax(scaled)?;
            check_simplex(g.value(z))?;
            let grid = model.forward_loss_matrix(&mut g, &lease, x, &targets, kinds)?;
            let flat: Vec<NodeId> = grid.into_iter().flatten().collect();
            masked_loss(&mut g, &flat, z)?
        }
        MaskingMode::Fixed { branch_of_task } => {
            let col =
                model.forward_loss_column(&mut g, &lease, x, &targets, kinds, branch_of_task)?;
            let n = col.len();
            let ones = g.constant(Mat::filled(n, 1, 1.0))?;
            masked_loss(&mut g, &col, ones)?
        }
    };
    g.backward(loss_node)?;
    params.absorb_grads(&g, &lease);
    adam_step(params, adam)?;
    Ok(g.value(loss_node).scalar_value())
}

/// Masked validation loss with the noise-free relaxation: the loss grid
/// weighted by `softmax(S / tau)` for learned masking, by the frozen one-hot
/// for fixed masking. With one group both masks are exactly 1.0, keeping the
/// two paths bit-identical.
fn masked_val_loss(
    model: &GroupModel,
    params: &ParamSet,
    masking: &MaskingMode,
    val_x: &Mat,
    val_ys: &[Mat],
    kinds: &[crate::tasksuite::TaskKind],
    tau: Option<f64>,
) -> f64 {
    let (grid, z) = match masking {
        MaskingMode::Learned { assignment, .. } => {
            let tau = tau.expect("learned masking always has a temperature");
            let scores = assignment.scores(params);
            let z = crate::autodiff::softmax_rows(&scores.map(|v| v / tau));
            (model.eval_loss_grid(params, val_x, val_ys, kinds), z)
        }
        MaskingMode::Fixed { branch_of_task } => {
            let losses = model.eval_task_losses(params, val_x, val_ys, kinds, branch_of_task);
            (vec![losses], Mat::filled(branch_of_task.len(), 1, 1.0))
        }
    };
    let mut acc = 0.0;
    for i in 0..z.rows() {
        for (k, column) in grid.iter().enumerate() {
            acc += column[i] * z.get(i, k);
        }
    }
    acc
}

fn check_simplex(z: &Mat) -> Result<(), GroupingError> {
    for row in 0..z.rows() {
        let sum: f64 = z.row(row).iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(GroupingError::SimplexViolation { row, sum });
        }
    }
    Ok(())
}

/// Attaches the abort diagnostics the caller needs when a loss goes
/// non-finite mid-run.
fn at_nan(
    err: GroupingError,
    epoch: usize,
    tau: Option<f64>,
    masking: &MaskingMode,
    params: &ParamSet,
) -> GroupingError {
    match err {
        GroupingError::Autodiff(source @ AutodiffError::NonFinite { .. }) => {
            let max_abs_s = match masking {
                MaskingMode::Learned { assignment, .. } => assignment.scores(params).max_abs(),
                MaskingMode::Fixed { .. } => 0.0,
            };
            GroupingError::NanLoss {
                epoch,
                tau: tau.unwrap_or(0.0),
                max_abs_s,
                source,
            }
        }
        other => other,
    }
}

/// Trains a fresh single-branch model on all tasks and snapshots its weights
/// for cloning into branched models.
pub fn pretrain_naive(
    suite: &TaskSuite,
    arch: Arch,
    budget: &TrainBudget,
    seed: u64,
) -> Result<(NaiveInit, TrainHistory), GroupingError> {
    let mut params = ParamSet::new();
    let mut rng = ChaCha12Rng::seed_from_u64(substream_seed(seed, TAG_INIT));
    let model = GroupModel::init_scratch(
        &mut params,
        arch,
        suite.n_tasks(),
        1,
        &mut rng,
        None,
    )?;
    let mut masking = MaskingMode::Fixed {
        branch_of_task: vec![0; suite.n_tasks()],
    };
    let (history, _) = run_training(&model, &mut params, &mut masking, suite, budget, seed)?;
    Ok((model.snapshot_naive(&params), history))
}

/// One-shot joint training: weights and assignment scores optimized together
/// through the relaxed mask, starting from cloned pretrained branches and a
/// uniform assignment.
pub fn train_one_shot(
    suite: &TaskSuite,
    k_groups: usize,
    naive: &NaiveInit,
    schedule: &TemperatureSchedule,
    budget: &TrainBudget,
    seed: u64,
) -> Result<TrainOutcome, GroupingError> {
    let mut params = ParamSet::new();
    let model = GroupModel::clone_from_naive(&mut params, naive, k_groups)?;
    let assignment = AssignmentMatrix::init_uniform(&mut params, suite.n_tasks(), k_groups);
    let per_epoch_noise = std::env::var("DMTG_EPOCH_NOISE").is_ok();
    let mut masking = MaskingMode::Learned {
        assignment,
        schedule: schedule.clone(),
        rng: ChaCha12Rng::seed_from_u64(substream_seed(seed, TAG_GUMBEL)),
        per_epoch_noise,
        epoch_noise: None,
    };
    let (history, adam) = run_training(&model, &mut params, &mut masking, suite, budget, seed)?;
    let MaskingMode::Learned { rng, .. } = masking else {
        unreachable!()
    };
    Ok(TrainOutcome {
        params,
        model,
        assignment: Some(assignment),
        fixed_assignment: Vec::new(),
        history,
        adam,
        schedule: Some(schedule.clone()),
        gumbel_rng: Some(rng),
        seed,
    })
}

/// Trains the branched model for one fixed partition: one branch per
/// non-empty group, heads only for member tasks, mask frozen to the
/// partition's one-hot.
pub fn train_fixed(
    partition: &Partition,
    suite: &TaskSuite,
    budget: &TrainBudget,
    init: InitWeights<'_>,
    seed: u64,
) -> Result<TrainOutcome, GroupingError> {
    let canon = partition.canonical();
    if canon.n_tasks() != suite.n_tasks() {
        return Err(GroupingError::TaskCount {
            expected: canon.n_tasks(),
            got: suite.n_tasks(),
        });
    }
    let branch_of_task = canon.labels().to_vec();
    let groups = canon.num_groups();
    let mut params = ParamSet::new();
    let model = match init {
        InitWeights::Scratch { arch } => {
            let mut rng = ChaCha12Rng::seed_from_u64(substream_seed(seed, TAG_INIT));
            GroupModel::init_scratch(
                &mut params,
                arch,
                suite.n_tasks(),
                groups,
                &mut rng,
                Some(&branch_of_task),
            )?
        }
        InitWeights::Naive(naive) => GroupModel::clone_from_naive_masked(
            &mut params,
            naive,
            groups,
            Some(&branch_of_task),
        )?,
    };
    let mut masking = MaskingMode::Fixed {
        branch_of_task: branch_of_task.clone(),
    };
    let (history, adam) = run_training(&model, &mut params, &mut masking, suite, budget, seed)?;
    Ok(TrainOutcome {
        params,
        model,
        assignment: None,
        fixed_assignment: branch_of_task,
        history,
        adam,
        schedule: None,
        gumbel_rng: None,
        seed,
    })
}
