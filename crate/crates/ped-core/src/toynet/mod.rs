//! A small trainable skip-connection classifier for exercising the
//! pruning pipeline end to end.
//!
//! The network is a linear stem, a chain of `L` skip units, and a linear
//! softmax head. Unit `l` reads the running stream `U_{l-1}` and emits
//! `T_l` through a two-layer perceptron `relu(U W1 + b1) W2 + b2` (the
//! only nonlinearity is the hidden relu). The stream composes either
//!
//! * residually: `U_l = U_{l-1} + T_l`, all widths equal, or
//! * densely: `U_l = [U_{l-1}, T_l]`, widths growing by the unit width.
//!
//! Pruning a unit removes its contribution: residual streams skip the
//! add, dense streams drop the concatenated block (later units and the
//! head then read a physically narrower stream). Parameters of pruned
//! units stay in storage, frozen, so policies can be compared and
//! checkpoints stay shape-stable; counting and flattening skip them.
//!
//! FLOP convention, per sample: a linear map `in -> out` costs
//! `2 * in * out` (multiply + add), an activation costs 1 per element.
//! Bias additions, residual adds, and the softmax are not counted.

mod adapter;
mod checkpoint;
mod data;
mod net;

pub use adapter::{
    compare_strategies, prepare_trained, prune_from, run_experiment, DataConfig, Experiment,
    PreparedRun, RunSummary, StageZero, ToyAdapter, ToyAdapterConfig,
};
pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC};
pub use data::{gen_synthetic, stratified_split, Batch, DataKind};
pub use net::{grad_check_suite, ForwardTrace, NetGrads, SkipNetwork, TrainConfig, TrainStats};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::io::IoError;
use crate::ped::{PedError, PruningPolicy};

#[derive(Debug, Error)]
pub enum ToynetError {
    #[error("invalid configuration: {detail}")]
    InvalidConfig { detail: String },
    #[error("input has {found} columns, expected {expected}")]
    ShapeMismatch { expected: usize, found: usize },
    #[error("training diverged at epoch {epoch}: loss {loss}")]
    DivergedLoss { epoch: usize, loss: f64 },
    #[error("{path}: failed to read checkpoint: {source}")]
    CheckpointRead {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}: failed to write checkpoint: {source}")]
    CheckpointWrite {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}: bad checkpoint magic {found:?}, expected {expected:?}")]
    CheckpointMagic {
        path: String,
        found: [u8; 4],
        expected: [u8; 4],
    },
    #[error("{path}: unsupported checkpoint version {found}")]
    CheckpointVersion { path: String, found: u8 },
    #[error("{path}: checkpoint truncated: {detail}")]
    CheckpointTruncated { path: String, detail: String },
    #[error("{path}: {found} trailing bytes after checkpoint payload")]
    CheckpointTrailing { path: String, found: usize },
    #[error("{path}: checkpoint holds {found} weights, expected {expected}")]
    CheckpointWeights {
        path: String,
        expected: usize,
        found: usize,
    },
    #[error("{path}: checkpoint metadata: {detail}")]
    CheckpointMeta { path: String, detail: String },
    #[error(transparent)]
    Ped(#[from] PedError),
    #[error(transparent)]
    Io(#[from] IoError),
}

/// How unit outputs join the running stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Composition {
    Residual,
    Dense,
}

impl fmt::Display for Composition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Composition::Residual => write!(f, "residual"),
            Composition::Dense => write!(f, "dense"),
        }
    }
}

impl FromStr for Composition {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "residual" => Ok(Composition::Residual),
            "dense" => Ok(Composition::Dense),
            other => Err(format!(
                "unknown composition {other:?}, expected residual or dense"
            )),
        }
    }
}

/// Shape of a skip network. For residual composition `unit_width` must
/// equal `stem_width`; for dense composition it is the growth per unit.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkipNetConfig {
    pub input_dim: usize,
    pub stem_width: usize,
    pub units: usize,
    pub unit_width: usize,
    pub classes: usize,
    pub composition: Composition,
    /// Seed for weight initialisation.
    pub seed: u64,
}

impl SkipNetConfig {
    pub fn validate(&self) -> Result<(), ToynetError> {
        let fail = |detail: String| Err(ToynetError::InvalidConfig { detail });
        if self.input_dim == 0 {
            return fail("input_dim must be at least 1".to_string());
        }
        if self.stem_width == 0 || self.unit_width == 0 {
            return fail("widths must be at least 1".to_string());
        }
        if self.units == 0 {
            return fail("the network needs at least one unit".to_string());
        }
        if self.classes < 2 {
            return fail(format!("need at least 2 classes, got {}", self.classes));
        }
        if self.composition == Composition::Residual && self.unit_width != self.stem_width {
            return fail(format!(
                "residual composition needs unit_width == stem_width, got {} vs {}",
                self.unit_width, self.stem_width
            ));
        }
        Ok(())
    }

    /// Width of the stream entering unit `l` with every unit active;
    /// also the full row count of that unit's first weight matrix.
    pub(crate) fn full_input_width(&self, l: usize) -> usize {
        match self.composition {
            Composition::Residual => self.stem_width,
            Composition::Dense => self.stem_width + self.unit_width * l,
        }
    }

    /// Width of the stream entering unit `l` under `policy`.
    pub(crate) fn live_input_width(&self, policy: &PruningPolicy, l: usize) -> usize {
        match self.composition {
            Composition::Residual => self.stem_width,
            Composition::Dense => {
                let active_before = policy.active_set().iter().filter(|&&u| u < l).count();
                self.stem_width + self.unit_width * active_before
            }
        }
    }

    /// Stream width reaching the head with every unit active.
    pub(crate) fn full_final_width(&self) -> usize {
        self.full_input_width(self.units)
    }

    /// Stream width reaching the head under `policy`.
    pub(crate) fn live_final_width(&self, policy: &PruningPolicy) -> usize {
        self.live_input_width(policy, self.units)
    }
}

/// Trainable parameters under `policy`: stem and head always count,
/// pruned units and dense weight rows fed by pruned units do not.
pub fn count_params(cfg: &SkipNetConfig, policy: &PruningPolicy) -> u64 {
    debug_assert_eq!(policy.unit_count(), cfg.units);
    let w = cfg.unit_width as u64;
    let mut total = (cfg.input_dim as u64 + 1) * cfg.stem_width as u64;
    for &l in policy.active_set() {
        let input = cfg.live_input_width(policy, l) as u64;
        total += (input + 1) * w + (w + 1) * w;
    }
    total += (cfg.live_final_width(policy) as u64 + 1) * cfg.classes as u64;
    total
}

/// Per-sample forward FLOPs under `policy`. See the module docs for the
/// counting convention.
pub fn count_flops(cfg: &SkipNetConfig, policy: &PruningPolicy) -> u64 {
    debug_assert_eq!(policy.unit_count(), cfg.units);
    let w = cfg.unit_width as u64;
    let mut total = 2 * cfg.input_dim as u64 * cfg.stem_width as u64;
    for &l in policy.active_set() {
        let input = cfg.live_input_width(policy, l) as u64;
        total += 2 * input * w + w + 2 * w * w;
    }
    total += 2 * cfg.live_final_width(policy) as u64 * cfg.classes as u64;
    total
}
