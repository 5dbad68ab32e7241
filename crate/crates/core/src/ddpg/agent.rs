//! Actor-critic learner: target values, gradient steps and soft updates.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::env::ObservationScaler;
use super::networks::{
    soft_update_actor, soft_update_critic, ActionMap, Actor, Critic, ACTION_SIZE, OBSERVATION_SIZE,
};
use super::optim::{add_l2, clip_global_norm, Optimizer};
use super::replay::Transition;
use super::{DdpgError, TrainConfig};
use crate::model::ControlInput;

/// `υ = r + γ·Q′(s′, π′(s′))`, or `r` at a terminal transition.
pub fn target_q(critic_target: &Critic, actor_target: &Actor, next_obs: &[f64; OBSERVATION_SIZE], reward: f64, gamma: f64, terminal: bool) -> f64 {
    if terminal || gamma == 0.0 {
        return reward;
    }
    let a = actor_target.act(next_obs);
    reward + gamma * critic_target.value(next_obs, &a)
}

/// Mean squared TD error over the batch and its gradient with respect to
/// the critic parameters.
pub fn critic_loss_and_gradient(critic: &Critic, batch: &[&Transition], targets: &[f64]) -> (f64, Vec<f64>) {
    let n = batch.len() as f64;
    let mut grad = vec![0.0; critic.num_params()];
    let mut loss = 0.0;
    for (t, y) in batch.iter().zip(targets) {
        let trace = critic.trace(&t.obs, &t.action);
        let err = trace.value() - y;
        loss += err * err / n;
        critic.backward(&trace, 2.0 * err / n, &mut grad);
    }
    (loss, grad)
}

/// Mean critic value of the actor's actions over the batch and its
/// gradient with respect to the actor parameters.
pub fn actor_objective_and_gradient(actor: &Actor, critic: &Critic, batch: &[&Transition]) -> (f64, Vec<f64>) {
    let n = batch.len() as f64;
    let mut grad = vec![0.0; actor.net.num_params()];
    let mut objective = 0.0;
    for t in batch {
        let at = actor.net.trace(&t.obs);
        let a = at.output();
        let ct = critic.trace(&t.obs, a);
        objective += ct.value() / n;
        let dq_da = critic.action_gradient(&ct);
        let scaled: Vec<f64> = dq_da.iter().map(|g| g / n).collect();
        actor.net.backward(&at, &scaled, &mut grad);
    }
    (objective, grad)
}

/// Diagnostics from one update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpdateStats {
    pub value: f64,
    pub gradient_norm: f64,
}

/// One descent step on the TD loss with L2 on weights and global-norm
/// gradient clipping.
pub fn critic_update(
    critic: &mut Critic,
    optimizer: &mut Optimizer,
    batch: &[&Transition],
    targets: &[f64],
    l2: f64,
    gradient_threshold: f64,
) -> UpdateStats {
    let (loss, mut grad) = critic_loss_and_gradient(critic, batch, targets);
    let mut params = critic.params();
    add_l2(&mut grad, &params, &critic.weight_mask(), l2);
    let gradient_norm = clip_global_norm(&mut grad, gradient_threshold);
    optimizer.step(&mut params, &grad);
    critic.set_params(&params);
    UpdateStats { value: loss, gradient_norm }
}

/// One ascent step on the mean critic value of the actor's actions.
pub fn actor_update(
    actor: &mut Actor,
    critic: &Critic,
    optimizer: &mut Optimizer,
    batch: &[&Transition],
    l2: f64,
    gradient_threshold: f64,
) -> UpdateStats {
    let (objective, grad) = actor_objective_and_gradient(actor, critic, batch);
    let mut descent: Vec<f64> = grad.iter().map(|g| -g).collect();
    let mask = actor.net.weight_mask();
    add_l2(&mut descent, actor.net.params(), &mask, l2);
    let gradient_norm = clip_global_norm(&mut descent, gradient_threshold);
    optimizer.step(actor.net.params_mut(), &descent);
    UpdateStats { value: objective, gradient_norm }
}

/// Main and target networks together with their optimizer state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Agent {
    pub actor: Actor,
    pub critic: Critic,
    pub actor_target: Actor,
    pub critic_target: Critic,
    pub actor_optimizer: Optimizer,
    pub critic_optimizer: Optimizer,
    pub action_map: ActionMap,
    pub scaler: ObservationScaler,
}

/// Summary of one training step on a minibatch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LearnStats {
    pub critic_loss: f64,
    pub actor_objective: f64,
    pub max_abs_q: f64,
}

impl Agent {
    /// Fresh networks; targets start as exact copies.
    pub fn new<R: Rng + ?Sized>(config: &TrainConfig, rng: &mut R) -> Self {
        let actor = Actor::new(rng);
        let critic = Critic::new(rng);
        Self {
            actor_optimizer: Optimizer::new(config.optimizer, config.actor_learning_rate, actor.net.num_params()),
            critic_optimizer: Optimizer::new(config.optimizer, config.critic_learning_rate, critic.num_params()),
            actor_target: actor.clone(),
            critic_target: critic.clone(),
            actor,
            critic,
            action_map: ActionMap::default(),
            scaler: ObservationScaler::default(),
        }
    }

    /// Greedy input for a raw (unnormalized) observation.
    pub fn policy(&self, raw_obs: &[f64; OBSERVATION_SIZE]) -> ControlInput {
        self.action_map.to_input(&self.actor.act(&self.scaler.normalize(raw_obs)))
    }

    /// Input for a normalized observation, optionally with Gaussian noise of
    /// standard deviation `noise_std[c]` (input units) added before clipping.
    pub fn act<R: Rng + ?Sized>(&self, obs: &[f64; OBSERVATION_SIZE], noise_std: Option<[f64; ACTION_SIZE]>, rng: &mut R) -> ControlInput {
        let mut u = self.action_map.to_input(&self.actor.act(obs));
        if let Some(std) = noise_std {
            for c in 0..ACTION_SIZE {
                let z: f64 = rng.sample(rand_distr::StandardNormal);
                u.0[c] += std[c] * z;
            }
            u = u.clamped(&ControlInput(self.action_map.u_min), &ControlInput(self.action_map.u_max));
        }
        u
    }

    pub fn targets(&self, batch: &[&Transition], gamma: f64) -> Vec<f64> {
        batch
            .iter()
            .map(|t| target_q(&self.critic_target, &self.actor_target, &t.next_obs, t.reward, gamma, t.terminal))
            .collect()
    }

    /// Critic step, actor step and soft target updates on one minibatch.
    pub fn learn(&mut self, batch: &[&Transition], config: &TrainConfig) -> Result<LearnStats, DdpgError> {
        let targets = self.targets(batch, config.discount);
        let max_abs_q = batch
            .iter()
            .map(|t| self.critic.value(&t.obs, &t.action).abs())
            .chain(targets.iter().map(|v| v.abs()))
            .fold(0.0, f64::max);
        if !(max_abs_q <= config.q_bound) {
            return Err(DdpgError::DivergenceDetected { value: max_abs_q, bound: config.q_bound });
        }
        let c = critic_update(
            &mut self.critic,
            &mut self.critic_optimizer,
            batch,
            &targets,
            config.l2_regularization,
            config.gradient_threshold,
        );
        let a = actor_update(
            &mut self.actor,
            &self.critic,
            &mut self.actor_optimizer,
            batch,
            config.l2_regularization,
            config.gradient_threshold,
        );
        soft_update_critic(&mut self.critic_target, &self.critic, config.tau)?;
        soft_update_actor(&mut self.actor_target, &self.actor, config.tau)?;
        Ok(LearnStats {
            critic_loss: c.value,
            actor_objective: a.value,
            max_abs_q,
        })
    }
}
