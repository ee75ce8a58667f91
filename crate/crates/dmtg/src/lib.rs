//! Differentiable multi-task grouping at desk scale.
//!
//! Learns which of N tasks belong in which of at most K encoder groups by
//! relaxing the per-task categorical group choice with Gumbel-softmax and
//! pruning a K-by-N grid of task heads down to one head per task, jointly
//! with the model weights. Runs on synthetic task suites that plant a
//! ground-truth partition, so recovery is checkable. Ships the reference
//! strategies (naive MTL, single-task, random groups, pairwise-affinity
//! search, a brute-force partition oracle), normalized-gain metrics, and a
//! reproducible experiment runner.

pub mod autodiff;
pub mod baselines;
pub mod exec;
pub mod grouping;
pub mod metrics;
pub mod runner;
pub mod tasksuite;

pub use autodiff::Mat;
pub use grouping::Partition;
