//! Recurrent student policy: architecture, behavior-cloning trainer,
//! and a finite-difference gradient audit.
//!
//! The policy consumes the 16-dimensional observation vector (12
//! bounding-box values, 4 proprioceptive) and emits the 4-dimensional
//! action (end-effector delta, aperture command).  A stacked LSTM
//! carries the memory that makes masked observations survivable; the
//! decoder head is FC → GELU → dropout → FC.
//!
//! Everything is deliberately self-contained f64 math: the backward
//! pass is hand-derived backpropagation through time, checked against
//! central differences in [`grad_check`], so the trainer has no
//! framework dependency and stays bit-reproducible across runs.

mod grad_check;
mod linalg;
mod net;
mod train;

pub use grad_check::{
    grad_check, grad_check_with_fault, GradCheckReport, DEFAULT_EPSILON, DEFAULT_PER_TENSOR,
};
pub use net::{
    backward_seq, forward_seq, gelu, gelu_prime, inputs_to_matrix, policy_forward, policy_step,
    ForwardCache, LayerCache, LstmLayer, LstmState, PolicyParams, StepMode,
};
pub use train::{
    bc_train, evaluate, evaluate_agent, load_params, save_loss_csv, save_params, EvalOutcome,
    PolicyAgent, TrainReport, DEFAULT_EVAL_EPISODES,
};

use serde::{Deserialize, Serialize};

/// Policy architecture and training hyperparameters.
///
/// Defaults are the desk-scale operating point: a 2×64 LSTM trained
/// with L1 behavior cloning, cosine schedule with warmup, and random
/// per-camera masking at ratio 0.3.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicyConfig {
    /// Observation vector width (12 bbox + 4 proprio).
    pub input_dim: usize,
    /// Action width (3 end-effector deltas + aperture command).
    pub action_dim: usize,
    /// Stacked LSTM depth.
    pub rnn_layers: usize,
    /// LSTM hidden width.
    pub rnn_hidden: usize,
    /// Decoder hidden width.
    pub actor_hidden: usize,
    /// Dropout probability on the decoder hidden layer (train only).
    pub dropout_p: f64,
    /// Peak learning rate.
    pub lr: f64,
    /// Decoupled weight decay coefficient.
    pub weight_decay: f64,
    /// Passes over the training set.
    pub epochs: usize,
    /// Fraction of total updates spent in linear warmup.
    pub warmup_ratio: f64,
    /// Fraction of cameras hidden per step during training.
    pub random_mask_ratio: f64,
    /// Master seed; init/shuffle/mask/dropout streams derive from it.
    pub seed: u64,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            input_dim: crate::observe::OBS_DIM,
            action_dim: crate::sim::ACTION_DIM,
            rnn_layers: 2,
            rnn_hidden: 64,
            actor_hidden: 64,
            dropout_p: 0.1,
            lr: 2e-3,
            weight_decay: 1e-4,
            epochs: 50,
            warmup_ratio: 0.1,
            random_mask_ratio: 0.3,
            seed: 0,
        }
    }
}

impl PolicyConfig {
    pub fn validate(&self) -> Result<(), PolicyError> {
        fn bad(what: &'static str, detail: String) -> PolicyError {
            PolicyError::InvalidConfig { what, detail }
        }
        if self.input_dim == 0
            || self.action_dim == 0
            || self.rnn_layers == 0
            || self.rnn_hidden == 0
            || self.actor_hidden == 0
        {
            return Err(bad("dimensions", "all layer sizes must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(bad("dropout_p", format!("{} not in [0, 1)", self.dropout_p)));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(bad("lr", format!("{} must be positive", self.lr)));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(bad(
                "weight_decay",
                format!("{} must be non-negative", self.weight_decay),
            ));
        }
        if self.epochs == 0 {
            return Err(bad("epochs", "must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.warmup_ratio) {
            return Err(bad(
                "warmup_ratio",
                format!("{} not in [0, 1]", self.warmup_ratio),
            ));
        }
        if !(0.0..=1.0).contains(&self.random_mask_ratio) {
            return Err(bad(
                "random_mask_ratio",
                format!("{} not in [0, 1]", self.random_mask_ratio),
            ));
        }
        Ok(())
    }
}

/// Errors from policy construction, training, and parameter I/O.
#[derive(Debug, thiserror::Error)]
pub enum PolicyError {
    #[error("invalid policy config: {what}: {detail}")]
    InvalidConfig { what: &'static str, detail: String },
    #[error("shape mismatch in {what}: expected {expected}, got {got}")]
    ShapeMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("non-finite value encountered in policy computation")]
    NonFinite,
    #[error("training set is empty")]
    EmptyDataset,
    #[error("parameter file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parameter file {path}: {detail}")]
    Parse { path: String, detail: String },
    #[error(transparent)]
    Sim(#[from] crate::sim::SimError),
}
