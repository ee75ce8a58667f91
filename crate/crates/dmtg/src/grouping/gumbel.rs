//! Gumbel noise and the relaxed categorical sample.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{softmax_rows, Mat};

use super::GroupingError;

/// Standard Gumbel variate from a uniform draw: `-log(-log(u))`, `u` in (0,1).
#[inline]
pub fn gumbel_from_uniform(u: f64) -> f64 {
    -(-u.ln()).ln()
}

/// Matrix of i.i.d. standard Gumbel noise. Deterministic given the generator
/// state; zero uniform draws are rejected so the transform stays finite.
pub fn sample_gumbel(rows: usize, cols: usize, rng: &mut impl Rng) -> Mat {
    Mat::from_fn(rows, cols, |_, _| loop {
        let u: f64 = rng.random();
        if u > 0.0 {
            break gumbel_from_uniform(u);
        }
    })
}

/// Relaxed sample: row-wise softmax of `(s + g) / tau`. Differentiable in `s`
/// when built through the graph; this is the plain-value version used for
/// analysis and invariant checks.
pub fn gumbel_softmax(s: &Mat, g: &Mat, tau: f64) -> Result<Mat, GroupingError> {
    if tau <= 0.0 {
        return Err(GroupingError::NonPositiveTau(tau));
    }
    if !s.same_shape(g) {
        return Err(GroupingError::NoiseShape {
            s: (s.rows(), s.cols()),
            g: (g.rows(), g.cols()),
        });
    }
    let scaled = s.zip_map(g, |a, b| (a + b) / tau);
    Ok(softmax_rows(&scaled))
}

/// Per-epoch temperature: either held fixed or decayed geometrically and
/// clamped at a floor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TemperatureSchedule {
    Fixed {
        tau: f64,
    },
    Anneal {
        start: f64,
        end: f64,
        factor: f64,
        epochs_per_decay: usize,
    },
}

impl TemperatureSchedule {
    pub fn validate(&self) -> Result<(), GroupingError> {
        match *self {
            TemperatureSchedule::Fixed { tau } => {
                if tau <= 0.0 {
                    return Err(GroupingError::NonPositiveTau(tau));
                }
            }
            TemperatureSchedule::Anneal {
                start,
                end,
                factor,
                epochs_per_decay,
            } => {
                if start <= 0.0 {
                    return Err(GroupingError::NonPositiveTau(start));
                }
                if end <= 0.0 {
                    return Err(GroupingError::NonPositiveTau(end));
                }
                if end > start {
                    return Err(GroupingError::BadSchedule(
                        "end temperature above start".into(),
                    ));
                }
                if !(factor > 0.0 && factor < 1.0) {
                    return Err(GroupingError::BadSchedule(
                        "decay factor must lie in (0, 1)".into(),
                    ));
                }
                if epochs_per_decay == 0 {
                    return Err(GroupingError::BadSchedule(
                        "epochs_per_decay must be >= 1".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Temperature for the given epoch (0-based). Non-increasing in `epoch`.
    pub fn tau_at(&self, epoch: usize) -> f64 {
        match *self {
            TemperatureSchedule::Fixed { tau } => tau,
            TemperatureSchedule::Anneal {
                start,
                end,
                factor,
                epochs_per_decay,
            } => {
                let decays = (epoch / epochs_per_decay) as i32;
                (start * factor.powi(decays)).max(end)
            }
        }
    }
}
