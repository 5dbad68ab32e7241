//! Deep deterministic policy gradient agent for the greenhouse.
//!
//! Everything here is implemented directly on `f64` slices: dense networks
//! with manual backpropagation, Adam, a FIFO replay buffer, target networks
//! with soft updates, and a training loop over one-day episodes with
//! perturbed weather and randomized initial states.

mod agent;
mod controller;
mod env;
pub mod mlp;
mod networks;
mod optim;
mod replay;
mod train;

pub use agent::{
    actor_objective_and_gradient, actor_update, critic_loss_and_gradient, critic_update, target_q, Agent, LearnStats,
    UpdateStats,
};
pub use controller::RlController;
pub use env::{observe, reward, GreenhouseEnv, ObservationScaler, ReferenceSchedule, References, RewardConfig, StepOutcome};
pub use networks::{
    soft_update_actor, soft_update_critic, soft_update_params, ActionMap, Actor, Critic, ACTION_SIZE, OBSERVATION_SIZE,
};
pub use optim::{add_l2, clip_global_norm, Optimizer, OptimizerKind};
pub use replay::{ReplayBuffer, Transition};
pub use train::{
    evaluate, train, AgentBundle, Checkpoint, CurvePoint, Episode, EpisodeFactory, Trainer, CHECKPOINT_VERSION,
    LEARNING_CURVE_HEADER,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::ModelError;
use crate::weather::WeatherError;

#[derive(Debug, Error)]
pub enum DdpgError {
    #[error("network architectures do not match")]
    ArchitectureMismatch,
    #[error("critic value {value} exceeds divergence bound {bound}")]
    DivergenceDetected { value: f64, bound: f64 },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Weather(#[from] WeatherError),
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Training hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub steps_per_epoch: usize,
    pub actor_learning_rate: f64,
    pub critic_learning_rate: f64,
    /// Global gradient-norm threshold.
    pub gradient_threshold: f64,
    pub l2_regularization: f64,
    pub discount: f64,
    /// Soft target update rate.
    pub tau: f64,
    pub buffer_capacity: usize,
    pub batch_size: usize,
    /// Transitions collected with uniformly random actions before the
    /// first network update.
    pub warmup_steps: usize,
    pub optimizer: OptimizerKind,
    /// Exploration noise standard deviation as a fraction of each input's
    /// half range.
    pub noise_std: f64,
    /// Per-epoch multiplicative decay of the exploration noise.
    pub noise_decay: f64,
    /// Range of the per-component factor applied to the initial state.
    pub initial_state_range: [f64; 2],
    /// Scale weather channels per episode by factors from `[0.7, 1.3]`.
    pub perturb_weather: bool,
    /// Training stops with an error if |Q| exceeds this bound.
    pub q_bound: f64,
    /// Noise-free episodes used for the per-epoch evaluation reward.
    pub eval_episodes: usize,
    pub eval_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 500,
            steps_per_epoch: 96,
            actor_learning_rate: 1e-3,
            critic_learning_rate: 1e-3,
            gradient_threshold: 1.0,
            l2_regularization: 1e-5,
            discount: 0.9,
            tau: 5e-3,
            buffer_capacity: 10_000,
            batch_size: 64,
            warmup_steps: 1440,
            optimizer: OptimizerKind::Adam,
            noise_std: 0.1,
            noise_decay: 0.995,
            initial_state_range: [0.8, 1.2],
            perturb_weather: true,
            q_bound: 1e6,
            eval_episodes: 10,
            eval_seed: 0x5eed,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), DdpgError> {
        let bad = |m: &str| Err(DdpgError::InvalidConfig(m.to_string()));
        if !(0.0..=1.0).contains(&self.discount) {
            return bad("discount must lie in [0, 1]");
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return bad("tau must lie in (0, 1]");
        }
        if self.steps_per_epoch == 0 || self.batch_size == 0 || self.buffer_capacity == 0 {
            return bad("steps per epoch, batch size and buffer capacity must be positive");
        }
        if !(self.actor_learning_rate > 0.0 && self.critic_learning_rate > 0.0) {
            return bad("learning rates must be positive");
        }
        if !(self.noise_std >= 0.0 && self.noise_decay > 0.0 && self.l2_regularization >= 0.0) {
            return bad("noise and regularization settings must be nonnegative");
        }
        if self.warmup_steps > self.buffer_capacity {
            return bad("warm-up must fit in the replay buffer");
        }
        let [lo, hi] = self.initial_state_range;
        if !(lo > 0.0 && lo <= hi) {
            return bad("initial state range must be positive and ordered");
        }
        Ok(())
    }
}
