//! Versioned training snapshots that round-trip bit-exactly.
//!
//! JSON with shortest-round-trip float encoding, so every `f64` (weights,
//! scores, optimizer moments) and the noise generator state reload to the
//! exact bits that were saved.

use std::path::Path;

use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{AdamState, ParamSet};

use super::gumbel::TemperatureSchedule;
use super::model::GroupModel;
use super::train::{AssignmentMatrix, TrainOutcome};
use super::GroupingError;

const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub model: GroupModel,
    pub params: ParamSet,
    pub assignment: Option<AssignmentMatrix>,
    pub adam: AdamState,
    pub schedule: Option<TemperatureSchedule>,
    pub epochs_done: usize,
    pub gumbel_rng: Option<ChaCha12Rng>,
    pub seed: u64,
}

impl Checkpoint {
    pub fn from_outcome(outcome: &TrainOutcome) -> Self {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            model: outcome.model.clone(),
            params: outcome.params.clone(),
            assignment: outcome.assignment,
            adam: outcome.adam.clone(),
            schedule: outcome.schedule.clone(),
            epochs_done: outcome.history.len(),
            gumbel_rng: outcome.gumbel_rng.clone(),
            seed: outcome.seed,
        }
    }

    /// Field-by-field equality; `f64` payloads compare by exact value and no
    /// NaNs can occur (the trainers reject them), so this is bit-exactness.
    pub fn same_state(&self, other: &Checkpoint) -> bool {
        self.version == other.version
            && self.model == other.model
            && self.params == other.params
            && self.adam == other.adam
            && self.schedule == other.schedule
            && self.epochs_done == other.epochs_done
            && self.gumbel_rng == other.gumbel_rng
            && self.seed == other.seed
    }
}

pub fn save_checkpoint(path: &Path, checkpoint: &Checkpoint) -> Result<(), GroupingError> {
    std::fs::write(path, serde_json::to_string(checkpoint)?)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, GroupingError> {
    let text = std::fs::read_to_string(path)?;
    let checkpoint: Checkpoint = serde_json::from_str(&text)?;
    if checkpoint.version != CHECKPOINT_VERSION {
        return Err(GroupingError::CheckpointVersion(checkpoint.version));
    }
    Ok(checkpoint)
}
