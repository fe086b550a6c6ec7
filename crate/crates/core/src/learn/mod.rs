//! Policy learning: a small tanh MLP with exact gradients, PPO with GAE, and a
//! least-squares transition discriminator for the adversarial imitation mode.

mod mlp;
mod ppo;
mod train;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::EnvError;

pub use mlp::{clip_grad_norm, Adam, Cache, Mlp};
pub use ppo::{
    discriminator_grad, discriminator_loss, gae, log_prob, normalize_advantages, ppo_update, train_discriminator,
    Batch, DiscStats, GaussianPolicy, Normalizer, PpoOptimizers, PpoStats,
};
pub use train::{
    config_hash, curves_to_csv, disc_curves_to_csv, train, Agent, AgentPolicy, Checkpoint, CurveRow, DiscRow,
    OptimState, TrainFailure, TrainOutcome,
};

#[derive(Debug, Error)]
pub enum LearnError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("length mismatch: {rewards} rewards, {values} values, {dones} done flags")]
    LengthMismatch { rewards: usize, values: usize, dones: usize },
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("empty batch")]
    EmptyBatch,
    #[error("non-finite loss or gradient")]
    NonFiniteLoss,
    #[error("checkpoint is incompatible: {0}")]
    IncompatibleCheckpoint(String),
    #[error(transparent)]
    Env(#[from] EnvError),
}

/// Training objective variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// Imitation only (ω^G = 0).
    Dm,
    /// Imitation plus pointing reward.
    DmWr,
    /// Discriminator reward in place of imitation, rise-phase clips only.
    Amp,
    /// Pointing reward only (ω^I = 0).
    TaskOnly,
}

impl Mode {
    pub fn uses_references(self) -> bool {
        !matches!(self, Mode::TaskOnly)
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::Dm => "dm",
            Mode::DmWr => "dm-wr",
            Mode::Amp => "amp",
            Mode::TaskOnly => "task-only",
        })
    }
}

impl std::str::FromStr for Mode {
    type Err = String;
    fn from_str(s: &str) -> Result<Mode, String> {
        match s {
            "dm" => Ok(Mode::Dm),
            "dm-wr" => Ok(Mode::DmWr),
            "amp" => Ok(Mode::Amp),
            "task-only" => Ok(Mode::TaskOnly),
            _ => Err(format!("unknown mode '{s}' (dm, dm-wr, amp, task-only)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub policy_lr: f64,
    pub value_lr: f64,
    pub disc_lr: f64,
    pub clip_ratio: f64,
    pub gamma: f64,
    pub lambda: f64,
    /// Environment steps collected per update (whole episodes, at least this many).
    pub batch_steps: usize,
    pub minibatch_size: usize,
    pub epochs: usize,
    pub total_steps: usize,
    pub seed: u64,
    pub policy_hidden: Vec<usize>,
    pub value_hidden: Vec<usize>,
    pub disc_hidden: Vec<usize>,
    pub init_log_std: f64,
    /// Sinusoidal phase-feature pairs appended to the network input.
    pub phase_features: usize,
    pub log_std_min: f64,
    pub log_std_max: f64,
    pub entropy_coef: f64,
    /// Global gradient-norm clip per network; 0 disables.
    pub max_grad_norm: f64,
    pub disc_steps: usize,
    pub disc_minibatch: usize,
    /// Number of reference clips used (all when unset).
    pub clip_count: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            policy_lr: 3e-4,
            value_lr: 1e-3,
            disc_lr: 1e-3,
            clip_ratio: 0.2,
            gamma: 0.95,
            lambda: 0.95,
            batch_steps: 2048,
            minibatch_size: 256,
            epochs: 5,
            total_steps: 200_000,
            seed: 0,
            policy_hidden: vec![64, 64],
            value_hidden: vec![64, 64],
            disc_hidden: vec![64],
            init_log_std: -1.0,
            phase_features: 8,
            log_std_min: -5.0,
            log_std_max: 1.0,
            entropy_coef: 0.0,
            max_grad_norm: 1.0,
            disc_steps: 10,
            disc_minibatch: 256,
            clip_count: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), LearnError> {
        let bad = |m: &str| Err(LearnError::InvalidConfig(m.into()));
        if !(self.clip_ratio > 0.0 && self.clip_ratio < 1.0) {
            return bad("clip_ratio must lie in (0, 1)");
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) || !(self.lambda > 0.0 && self.lambda <= 1.0) {
            return bad("gamma and lambda must lie in (0, 1]");
        }
        if [self.batch_steps, self.minibatch_size, self.epochs, self.disc_minibatch].contains(&0) {
            return bad("batch, minibatch and epoch counts must be at least 1");
        }
        if [self.policy_lr, self.value_lr, self.disc_lr].iter().any(|lr| !(lr.is_finite() && *lr > 0.0)) {
            return bad("learning rates must be positive");
        }
        if self.policy_hidden.contains(&0) || self.value_hidden.contains(&0) || self.disc_hidden.contains(&0) {
            return bad("hidden layer sizes must be at least 1");
        }
        if !(self.log_std_min <= self.init_log_std && self.init_log_std <= self.log_std_max) {
            return bad("init_log_std must lie within [log_std_min, log_std_max]");
        }
        if self.clip_count == Some(0) {
            return bad("clip_count must be at least 1");
        }
        if !(self.entropy_coef.is_finite() && self.max_grad_norm.is_finite()) {
            return bad("entropy_coef and max_grad_norm must be finite");
        }
        Ok(())
    }
}
