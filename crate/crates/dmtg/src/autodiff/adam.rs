//! Named trainable parameters and the Adam update.

use serde::{Deserialize, Serialize};

use super::graph::{Graph, NodeId};
use super::mat::Mat;
use super::AutodiffError;

/// Stable handle into a [`ParamSet`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamId(pub usize);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Param {
    pub name: String,
    pub value: Mat,
    /// Set by [`ParamSet::absorb_grads`]; consumed and cleared by [`adam_step`].
    pub grad: Option<Mat>,
}

/// All trainable parameters of one model, in insertion order. The optimizer
/// state is kept index-aligned with this set.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamSet {
    params: Vec<Param>,
}

impl ParamSet {
    pub fn new() -> Self {
        ParamSet { params: Vec::new() }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Mat) -> ParamId {
        self.params.push(Param {
            name: name.into(),
            value,
            grad: None,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn value(&self, id: ParamId) -> &Mat {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Mat {
        &mut self.params[id.0].value
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    /// Leases every parameter into `graph` as a gradient-tracked leaf.
    /// Returns the node ids aligned with [`ParamId`] indices.
    pub fn lease(&self, graph: &mut Graph) -> Result<Lease, AutodiffError> {
        let mut nodes = Vec::with_capacity(self.params.len());
        for p in &self.params {
            nodes.push(graph.leaf(p.value.clone(), true)?);
        }
        Ok(Lease { nodes })
    }

    /// Pulls gradients out of a backward-completed graph into the `grad`
    /// slots, accumulating if a slot is already populated. Parameters the
    /// loss never touched get a zero gradient.
    pub fn absorb_grads(&mut self, graph: &Graph, lease: &Lease) {
        for (p, &node) in self.params.iter_mut().zip(&lease.nodes) {
            let delta = graph
                .grad(node)
                .cloned()
                .unwrap_or_else(|| Mat::zeros(p.value.rows(), p.value.cols()));
            match &mut p.grad {
                Some(g) => g.add_assign(&delta),
                slot @ None => *slot = Some(delta),
            }
        }
    }

    pub fn clear_grads(&mut self) {
        for p in &mut self.params {
            p.grad = None;
        }
    }

    /// Total number of scalar entries across all parameters.
    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }
}

/// Node ids of leased parameters, aligned with [`ParamId`] indices.
pub struct Lease {
    nodes: Vec<NodeId>,
}

impl Lease {
    pub fn node(&self, id: ParamId) -> NodeId {
        self.nodes[id.0]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam moment estimates, index-aligned with a [`ParamSet`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub hyper: AdamHyper,
    step: u64,
    m: Vec<Mat>,
    v: Vec<Mat>,
}

impl AdamState {
    pub fn new(params: &ParamSet, hyper: AdamHyper) -> Self {
        let m = params
            .iter()
            .map(|p| Mat::zeros(p.value.rows(), p.value.cols()))
            .collect::<Vec<_>>();
        AdamState {
            hyper,
            step: 0,
            m: m.clone(),
            v: m,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One Adam update with bias correction over every parameter in the set.
/// Every parameter must carry a populated gradient; gradients are zeroed
/// (cleared) afterwards.
pub fn adam_step(params: &mut ParamSet, state: &mut AdamState) -> Result<(), AutodiffError> {
    for p in &params.params {
        if p.grad.is_none() {
            return Err(AutodiffError::MissingGrad {
                name: p.name.clone(),
            });
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let h = state.hyper;
    let bc1 = 1.0 - h.beta1.powi(t);
    let bc2 = 1.0 - h.beta2.powi(t);
    for (idx, p) in params.params.iter_mut().enumerate() {
        let grad = p.grad.take().expect("checked above");
        let m = &mut state.m[idx];
        let v = &mut state.v[idx];
        let value = p.value.data_mut();
        let g = grad.data();
        let md = m.data_mut();
        let vd = v.data_mut();
        for i in 0..value.len() {
            md[i] = h.beta1 * md[i] + (1.0 - h.beta1) * g[i];
            vd[i] = h.beta2 * vd[i] + (1.0 - h.beta2) * g[i] * g[i];
            let mhat = md[i] / bc1;
            let vhat = vd[i] / bc2;
            value[i] -= h.lr * mhat / (vhat.sqrt() + h.eps);
        }
    }
    Ok(())
}
