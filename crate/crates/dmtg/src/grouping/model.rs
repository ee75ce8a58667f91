//! The branched model: an optional shared trunk, one encoder stack per
//! group, and a full grid of task heads (every branch owns a head for every
//! task until pruning picks the survivors).

use rand::Rng;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Lease, Mat, NodeId, ParamId, ParamSet};
use crate::tasksuite::TaskKind;

use super::GroupingError;

/// Encoder geometry. `depth` counts all encoder layers; the first
/// `shared_layers` of them form the trunk shared across branches.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Arch {
    pub input_dim: usize,
    pub depth: usize,
    pub width: usize,
    pub shared_layers: usize,
}

impl Arch {
    pub fn validate(&self) -> Result<(), GroupingError> {
        if self.shared_layers >= self.depth {
            return Err(GroupingError::BadArch {
                shared: self.shared_layers,
                depth: self.depth,
            });
        }
        Ok(())
    }

    /// Input width of encoder layer `l`.
    fn layer_in(&self, l: usize) -> usize {
        if l == 0 {
            self.input_dim
        } else {
            self.width
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
struct DenseIds {
    w: ParamId,
    b: ParamId,
}

/// Branched model over one [`ParamSet`]. Construction order of parameters is
/// fixed (trunk, then branches, then heads row by row), which keeps
/// checkpoints and optimizer state reproducible. `heads[k][i]` is `None`
/// when branch k owns no head for task i (fixed-partition non-members).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupModel {
    pub arch: Arch,
    pub n_tasks: usize,
    pub k_groups: usize,
    trunk: Vec<DenseIds>,
    branches: Vec<Vec<DenseIds>>,
    heads: Vec<Vec<Option<DenseIds>>>,
}

/// Plain-value snapshot of a trained single-branch model, used to initialize
/// every branch (and head row) identically.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NaiveInit {
    pub arch: Arch,
    pub n_tasks: usize,
    pub trunk: Vec<(Mat, Mat)>,
    pub branch: Vec<(Mat, Mat)>,
    pub heads: Vec<(Mat, Mat)>,
}

impl NaiveInit {
    /// Keeps the encoder but only the listed tasks' heads, for training on a
    /// restricted suite.
    pub fn restrict(&self, tasks: &[usize]) -> NaiveInit {
        NaiveInit {
            arch: self.arch,
            n_tasks: tasks.len(),
            trunk: self.trunk.clone(),
            branch: self.branch.clone(),
            heads: tasks.iter().map(|&t| self.heads[t].clone()).collect(),
        }
    }
}

fn gaussian_layer(
    rows: usize,
    cols: usize,
    rng: &mut ChaCha12Rng,
) -> (Mat, Mat) {
    let std = 1.0 / (rows as f64).sqrt();
    let w = Mat::from_fn(rows, cols, |_, _| std * rng.sample::<f64, _>(StandardNormal));
    (w, Mat::zeros(1, cols))
}

/// `membership[i] = k` builds a head for task i only on branch k; `None`
/// builds the full task-by-branch head grid.
fn head_wanted(membership: Option<&[usize]>, k: usize, i: usize) -> bool {
    membership.map_or(true, |m| m[i] == k)
}

impl GroupModel {
    /// Fresh random initialization; branches are independent draws.
    pub fn init_scratch(
        params: &mut ParamSet,
        arch: Arch,
        n_tasks: usize,
        k_groups: usize,
        rng: &mut ChaCha12Rng,
        membership: Option<&[usize]>,
    ) -> Result<Self, GroupingError> {
        arch.validate()?;
        let mut insert = |name: String, (w, b): (Mat, Mat)| DenseIds {
            w: params.insert(format!("{name}.w"), w),
            b: params.insert(format!("{name}.b"), b),
        };
        let trunk = (0..arch.shared_layers)
            .map(|l| insert(format!("trunk{l}"), gaussian_layer(arch.layer_in(l), arch.width, rng)))
            .collect();
        let branches = (0..k_groups)
            .map(|k| {
                (arch.shared_layers..arch.depth)
                    .map(|l| {
                        insert(
                            format!("branch{k}.layer{l}"),
                            gaussian_layer(arch.layer_in(l), arch.width, rng),
                        )
                    })
                    .collect()
            })
            .collect();
        let heads = (0..k_groups)
            .map(|k| {
                (0..n_tasks)
                    .map(|i| {
                        head_wanted(membership, k, i).then(|| {
                            insert(format!("head{k}.{i}"), gaussian_layer(arch.width, 1, rng))
                        })
                    })
                    .collect()
            })
            .collect();
        Ok(GroupModel {
            arch,
            n_tasks,
            k_groups,
            trunk,
            branches,
            heads,
        })
    }

    /// Branches and head rows all start as copies of the pretrained
    /// single-branch weights, so a task looks identical to every group at
    /// the start of joint training.
    pub fn clone_from_naive(
        params: &mut ParamSet,
        init: &NaiveInit,
        k_groups: usize,
    ) -> Result<Self, GroupingError> {
        Self::clone_from_naive_masked(params, init, k_groups, None)
    }

    /// Like [`GroupModel::clone_from_naive`] but building heads only where
    /// `membership` places a task.
    pub fn clone_from_naive_masked(
        params: &mut ParamSet,
        init: &NaiveInit,
        k_groups: usize,
        membership: Option<&[usize]>,
    ) -> Result<Self, GroupingError> {
        init.arch.validate()?;
        let mut insert = |name: String, (w, b): &(Mat, Mat)| DenseIds {
            w: params.insert(format!("{name}.w"), w.clone()),
            b: params.insert(format!("{name}.b"), b.clone()),
        };
        let trunk = init
            .trunk
            .iter()
            .enumerate()
            .map(|(l, layer)| insert(format!("trunk{l}"), layer))
            .collect();
        let branches = (0..k_groups)
            .map(|k| {
                init.branch
                    .iter()
                    .enumerate()
                    .map(|(l, layer)| insert(format!("branch{k}.layer{l}"), layer))
                    .collect()
            })
            .collect();
        let heads = (0..k_groups)
            .map(|k| {
                (0..init.n_tasks)
                    .map(|i| {
                        head_wanted(membership, k, i)
                            .then(|| insert(format!("head{k}.{i}"), &init.heads[i]))
                    })
                    .collect()
            })
            .collect();
        Ok(GroupModel {
            arch: init.arch,
            n_tasks: init.n_tasks,
            k_groups,
            trunk,
            branches,
            heads,
        })
    }

    /// Snapshot of branch 0 as plain values, for cloning into a new model.
    /// Only valid on full-grid models (every head present on branch 0).
    pub fn snapshot_naive(&self, params: &ParamSet) -> NaiveInit {
        let grab = |ids: &DenseIds| (params.value(ids.w).clone(), params.value(ids.b).clone());
        NaiveInit {
            arch: self.arch,
            n_tasks: self.n_tasks,
            trunk: self.trunk.iter().map(&grab).collect(),
            branch: self.branches[0].iter().map(&grab).collect(),
            heads: self.heads[0]
                .iter()
                .map(|h| grab(h.as_ref().expect("snapshot of a full-grid model")))
                .collect(),
        }
    }

    fn dense(
        &self,
        g: &mut Graph,
        lease: &Lease,
        ids: &DenseIds,
        x: NodeId,
        activate: bool,
    ) -> Result<NodeId, GroupingError> {
        let rows = g.value(x).rows();
        let z = g.matmul(x, lease.node(ids.w))?;
        let b = g.replicate_rows(lease.node(ids.b), rows)?;
        let z = g.add(z, b)?;
        Ok(if activate { g.tanh(z)? } else { z })
    }

    /// Encoder output of every branch on a leased batch, `rows x width` each.
    pub fn forward_encoders(
        &self,
        g: &mut Graph,
        lease: &Lease,
        x: NodeId,
    ) -> Result<Vec<NodeId>, GroupingError> {
        let mut t = x;
        for layer in &self.trunk {
            t = self.dense(g, lease, layer, t, true)?;
        }
        let mut outs = Vec::with_capacity(self.k_groups);
        for branch in &self.branches {
            let mut h = t;
            for layer in branch {
                h = self.dense(g, lease, layer, h, true)?;
            }
            outs.push(h);
        }
        Ok(outs)
    }

    fn head_ids(&self, k: usize, i: usize) -> Result<&DenseIds, GroupingError> {
        self.heads[k][i]
            .as_ref()
            .ok_or(GroupingError::HeadMissing { group: k, task: i })
    }

    /// Linear head output for (branch `k`, task `i`).
    pub fn head_output(
        &self,
        g: &mut Graph,
        lease: &Lease,
        k: usize,
        i: usize,
        encoded: NodeId,
    ) -> Result<NodeId, GroupingError> {
        let ids = *self.head_ids(k, i)?;
        self.dense(g, lease, &ids, encoded, false)
    }

    fn task_loss(
        &self,
        g: &mut Graph,
        kind: TaskKind,
        pred: NodeId,
        target: NodeId,
    ) -> Result<NodeId, GroupingError> {
        Ok(match kind {
            TaskKind::Regression => g.mse(pred, target)?,
            TaskKind::BinaryClassification => g.bce_with_logits(pred, target)?,
        })
    }

    /// Full task-by-branch loss grid, `out[i][k]` a scalar node. Entry (i, k)
    /// depends only on branch k (plus the trunk), never on other branches.
    pub fn forward_loss_matrix(
        &self,
        g: &mut Graph,
        lease: &Lease,
        x: NodeId,
        targets: &[NodeId],
        kinds: &[TaskKind],
    ) -> Result<Vec<Vec<NodeId>>, GroupingError> {
        if targets.len() != self.n_tasks || kinds.len() != self.n_tasks {
            return Err(GroupingError::TaskCount {
                expected: self.n_tasks,
                got: targets.len().min(kinds.len()),
            });
        }
        let encoders = self.forward_encoders(g, lease, x)?;
        let mut losses = vec![Vec::with_capacity(self.k_groups); self.n_tasks];
        for (k, &enc) in encoders.iter().enumerate() {
            for i in 0..self.n_tasks {
                let pred = self.head_output(g, lease, k, i, enc)?;
                let l = self.task_loss(g, kind_of(kinds, i), pred, targets[i])?;
                losses[i].push(l);
            }
        }
        Ok(losses)
    }

    /// Member-only loss column for a fixed assignment: `out[i]` is task i's
    /// loss on its assigned branch.
    pub fn forward_loss_column(
        &self,
        g: &mut Graph,
        lease: &Lease,
        x: NodeId,
        targets: &[NodeId],
        kinds: &[TaskKind],
        branch_of_task: &[usize],
    ) -> Result<Vec<NodeId>, GroupingError> {
        let encoders = self.forward_encoders(g, lease, x)?;
        let mut out = Vec::with_capacity(self.n_tasks);
        for i in 0..self.n_tasks {
            let k = branch_of_task[i];
            let pred = self.head_output(g, lease, k, i, encoders[k])?;
            out.push(self.task_loss(g, kind_of(kinds, i), pred, targets[i])?);
        }
        Ok(out)
    }

    /// Plain-value inference losses of every task on one (X, per-task Y)
    /// split, with each task read from the branch `branch_of_task` names.
    /// Uses the same matrix kernels as the graph, just without recording.
    pub fn eval_task_losses(
        &self,
        params: &ParamSet,
        x: &Mat,
        ys: &[Mat],
        kinds: &[TaskKind],
        branch_of_task: &[usize],
    ) -> Vec<f64> {
        let forward_dense = |ids: &DenseIds, input: &Mat, activate: bool| -> Mat {
            let mut z = input.matmul(params.value(ids.w));
            let b = params.value(ids.b);
            for r in 0..z.rows() {
                for c in 0..z.cols() {
                    z.set(r, c, z.get(r, c) + b.get(0, c));
                }
            }
            if activate {
                z.map(f64::tanh)
            } else {
                z
            }
        };

        let mut trunk_out = x.clone();
        for layer in &self.trunk {
            trunk_out = forward_dense(layer, &trunk_out, true);
        }
        let mut branch_cache: Vec<Option<Mat>> = vec![None; self.k_groups];
        (0..self.n_tasks)
            .map(|i| {
                let k = branch_of_task[i];
                if branch_cache[k].is_none() {
                    let mut h = trunk_out.clone();
                    for layer in &self.branches[k] {
                        h = forward_dense(layer, &h, true);
                    }
                    branch_cache[k] = Some(h);
                }
                let enc = branch_cache[k].as_ref().expect("just filled");
                let head = self.heads[k][i].as_ref().expect("task evaluated on a branch without its head");
                let pred = forward_dense(head, enc, false);
                match kind_of(kinds, i) {
                    TaskKind::Regression => {
                        pred.data()
                            .iter()
                            .zip(ys[i].data())
                            .map(|(&p, &t)| (p - t) * (p - t))
                            .sum::<f64>()
                            / pred.len() as f64
                    }
                    TaskKind::BinaryClassification => {
                        pred.data()
                            .iter()
                            .zip(ys[i].data())
                            .map(|(&p, &t)| p.max(0.0) - p * t + (-p.abs()).exp().ln_1p())
                            .sum::<f64>()
                            / pred.len() as f64
                    }
                }
            })
            .collect()
    }
}

impl GroupModel {
    /// Full task-by-branch loss grid as plain values: `out[k][i]` is task i
    /// evaluated through branch k. Only valid on full-grid models.
    pub fn eval_loss_grid(
        &self,
        params: &ParamSet,
        x: &Mat,
        ys: &[Mat],
        kinds: &[TaskKind],
    ) -> Vec<Vec<f64>> {
        (0..self.k_groups)
            .map(|k| self.eval_task_losses(params, x, ys, kinds, &vec![k; self.n_tasks]))
            .collect()
    }
}

fn kind_of(kinds: &[TaskKind], i: usize) -> TaskKind {
    kinds[i]
}

/// Analytic multiply-add and parameter counts for the branched architecture.
/// Encoder cost depends on K but never on N; head cost is exactly K*N*width.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComplexityCounts {
    pub encoder_macs_per_sample: u64,
    pub head_macs_per_sample: u64,
    pub encoder_params: u64,
    pub head_params: u64,
    pub assignment_params: u64,
}

pub fn count_complexity(arch: &Arch, n_tasks: usize, k_groups: usize) -> ComplexityCounts {
    let layer_macs = |l: usize| (arch.layer_in(l) * arch.width) as u64;
    let layer_params = |l: usize| ((arch.layer_in(l) + 1) * arch.width) as u64;
    let trunk_macs: u64 = (0..arch.shared_layers).map(layer_macs).sum();
    let branch_macs: u64 = (arch.shared_layers..arch.depth).map(layer_macs).sum();
    let trunk_params: u64 = (0..arch.shared_layers).map(layer_params).sum();
    let branch_params: u64 = (arch.shared_layers..arch.depth).map(layer_params).sum();
    let (n, k) = (n_tasks as u64, k_groups as u64);
    ComplexityCounts {
        encoder_macs_per_sample: trunk_macs + k * branch_macs,
        head_macs_per_sample: k * n * arch.width as u64,
        encoder_params: trunk_params + k * branch_params,
        head_params: k * n * (arch.width as u64 + 1),
        assignment_params: n * k,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn small_arch() -> Arch {
        Arch {
            input_dim: 4,
            depth: 2,
            width: 8,
            shared_layers: 0,
        }
    }

    #[test]
    fn arch_rejects_trunk_swallowing_everything() {
        let arch = Arch {
            input_dim: 4,
            depth: 2,
            width: 8,
            shared_layers: 2,
        };
        assert!(arch.validate().is_err());
    }

    #[test]
    fn cloned_branches_are_weight_identical() {
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        let mut pre = ParamSet::new();
        let naive = GroupModel::init_scratch(&mut pre, small_arch(), 3, 1, &mut rng, None).unwrap();
        let snap = naive.snapshot_naive(&pre);

        let mut params = ParamSet::new();
        let model = GroupModel::clone_from_naive(&mut params, &snap, 4).unwrap();
        for k in 1..4 {
            for (a, b) in model.branches[0].iter().zip(&model.branches[k]) {
                assert_eq!(params.value(a.w), params.value(b.w));
                assert_eq!(params.value(a.b), params.value(b.b));
            }
            for (a, b) in model.heads[0].iter().zip(&model.heads[k]) {
                let (a, b) = (a.unwrap(), b.unwrap());
                assert_eq!(params.value(a.w), params.value(b.w));
            }
        }
    }

    #[test]
    fn identical_branches_give_identical_loss_columns() {
        let mut rng = ChaCha12Rng::seed_from_u64(2);
        let mut pre = ParamSet::new();
        let naive = GroupModel::init_scratch(&mut pre, small_arch(), 2, 1, &mut rng, None).unwrap();
        let snap = naive.snapshot_naive(&pre);
        let mut params = ParamSet::new();
        let model = GroupModel::clone_from_naive(&mut params, &snap, 2).unwrap();

        let mut g = Graph::new();
        let lease = params.lease(&mut g).unwrap();
        let x = g
            .constant(Mat::from_fn(5, 4, |i, j| (i * 4 + j) as f64 * 0.1 - 0.9))
            .unwrap();
        let y0 = g.constant(Mat::from_fn(5, 1, |i, _| i as f64 * 0.2)).unwrap();
        let y1 = g.constant(Mat::from_fn(5, 1, |i, _| 1.0 - i as f64 * 0.1)).unwrap();
        let kinds = [TaskKind::Regression, TaskKind::Regression];
        let l = model
            .forward_loss_matrix(&mut g, &lease, x, &[y0, y1], &kinds)
            .unwrap();
        for row in &l {
            let a = g.value(row[0]).scalar_value();
            let b = g.value(row[1]).scalar_value();
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn single_task_loss_matches_direct_mse() {
        // one task, one branch: the grid entry must equal a hand computation
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let mut params = ParamSet::new();
        let arch = Arch {
            input_dim: 2,
            depth: 1,
            width: 3,
            shared_layers: 0,
        };
        let model = GroupModel::init_scratch(&mut params, arch, 1, 1, &mut rng, None).unwrap();

        let x = Mat::from_rows(&[vec![0.5, -1.0], vec![1.5, 0.25], vec![-0.75, 2.0]]).unwrap();
        let y = Mat::from_rows(&[vec![0.1], vec![-0.2], vec![0.3]]).unwrap();

        let mut g = Graph::new();
        let lease = params.lease(&mut g).unwrap();
        let xn = g.constant(x.clone()).unwrap();
        let yn = g.constant(y.clone()).unwrap();
        let l = model
            .forward_loss_matrix(&mut g, &lease, xn, &[yn], &[TaskKind::Regression])
            .unwrap();

        // hand computation with plain matrix ops
        let w0 = params.value(ParamId(0));
        let b0 = params.value(ParamId(1));
        let hw = params.value(ParamId(2));
        let hb = params.value(ParamId(3));
        let mut hidden = x.matmul(w0);
        for r in 0..3 {
            for c in 0..3 {
                hidden.set(r, c, (hidden.get(r, c) + b0.get(0, c)).tanh());
            }
        }
        let mut pred = hidden.matmul(hw);
        for r in 0..3 {
            pred.set(r, 0, pred.get(r, 0) + hb.get(0, 0));
        }
        let expected: f64 = pred
            .data()
            .iter()
            .zip(y.data())
            .map(|(&p, &t)| (p - t) * (p - t))
            .sum::<f64>()
            / 3.0;

        assert!((g.value(l[0][0]).scalar_value() - expected).abs() < 1e-14);
        assert_eq!(l.len(), 1);
        assert_eq!(l[0].len(), 1);
    }

    #[test]
    fn complexity_counts_by_shape_arithmetic() {
        // single dense layer 16 -> 8: 128 multiply-adds per sample
        let arch = Arch {
            input_dim: 16,
            depth: 1,
            width: 8,
            shared_layers: 0,
        };
        assert_eq!(count_complexity(&arch, 1, 1).encoder_macs_per_sample, 128);

        let arch = Arch {
            input_dim: 16,
            depth: 2,
            width: 32,
            shared_layers: 0,
        };
        // encoder independent of N
        let c4 = count_complexity(&arch, 4, 2);
        let c8 = count_complexity(&arch, 8, 2);
        assert_eq!(c4.encoder_macs_per_sample, c8.encoder_macs_per_sample);
        // heads linear in K
        let k1 = count_complexity(&arch, 4, 1);
        assert_eq!(c4.head_macs_per_sample, 2 * k1.head_macs_per_sample);
    }

    #[test]
    fn eval_matches_graph_losses() {
        let mut rng = ChaCha12Rng::seed_from_u64(4);
        let mut params = ParamSet::new();
        let model = GroupModel::init_scratch(&mut params, small_arch(), 2, 2, &mut rng, None).unwrap();
        let x = Mat::from_fn(6, 4, |i, j| ((i + j) as f64 * 0.37).sin());
        let ys = vec![
            Mat::from_fn(6, 1, |i, _| (i as f64 * 0.11).cos()),
            Mat::from_fn(6, 1, |i, _| f64::from(i % 2 == 0)),
        ];
        let kinds = [TaskKind::Regression, TaskKind::BinaryClassification];
        let branch_of_task = [1, 0];

        let direct = model.eval_task_losses(&params, &x, &ys, &kinds, &branch_of_task);

        let mut g = Graph::new();
        let lease = params.lease(&mut g).unwrap();
        let xn = g.constant(x).unwrap();
        let y0 = g.constant(ys[0].clone()).unwrap();
        let y1 = g.constant(ys[1].clone()).unwrap();
        let col = model
            .forward_loss_column(&mut g, &lease, xn, &[y0, y1], &kinds, &branch_of_task)
            .unwrap();
        for (i, &node) in col.iter().enumerate() {
            assert_eq!(g.value(node).scalar_value(), direct[i]);
        }
    }
}
