//! Actor and critic networks.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::mlp::{Activation, Mlp, Trace};
use super::DdpgError;
use crate::model::ControlInput;

pub const OBSERVATION_SIZE: usize = 10;
pub const ACTION_SIZE: usize = 3;

/// Deterministic policy: observation → action in `(−1, 1)³`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Actor {
    pub net: Mlp,
}

impl Actor {
    /// Three hidden layers of 20 ReLU units and a tanh output layer.
    pub fn new<R: Rng + ?Sized>(rng: &mut R) -> Self {
        Self {
            net: Mlp::new(
                &[OBSERVATION_SIZE, 20, 20, 20, ACTION_SIZE],
                &[Activation::Relu, Activation::Relu, Activation::Relu, Activation::Tanh],
                rng,
            ),
        }
    }

    pub fn act(&self, obs: &[f64; OBSERVATION_SIZE]) -> [f64; ACTION_SIZE] {
        let out = self.net.forward(obs);
        [out[0], out[1], out[2]]
    }
}

/// Action-value network. Observations pass through three dense layers of
/// 10 units, actions through two; the two feature vectors are summed,
/// rectified and fed to a linear scalar head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Critic {
    pub observation: Mlp,
    pub action: Mlp,
    pub head: Mlp,
}

pub struct CriticTrace {
    observation: Trace,
    action: Trace,
    merged: Trace,
    head: Trace,
}

impl CriticTrace {
    pub fn value(&self) -> f64 {
        self.head.output()[0]
    }
}

impl Critic {
    pub fn new<R: Rng + ?Sized>(rng: &mut R) -> Self {
        Self {
            observation: Mlp::new(
                &[OBSERVATION_SIZE, 10, 10, 10],
                &[Activation::Relu, Activation::Relu, Activation::Linear],
                rng,
            ),
            action: Mlp::new(&[ACTION_SIZE, 10, 10], &[Activation::Relu, Activation::Linear], rng),
            head: Mlp::new(&[10, 1], &[Activation::Linear], rng),
        }
    }

    pub fn value(&self, obs: &[f64], action: &[f64]) -> f64 {
        self.trace(obs, action).value()
    }

    pub fn trace(&self, obs: &[f64], action: &[f64]) -> CriticTrace {
        let observation = self.observation.trace(obs);
        let action = self.action.trace(action);
        let sum: Vec<f64> = observation
            .output()
            .iter()
            .zip(action.output())
            .map(|(a, b)| (a + b).max(0.0))
            .collect();
        let head = self.head.trace(&sum);
        let merged = Trace::from_output(sum);
        CriticTrace {
            observation,
            action,
            merged,
            head,
        }
    }

    /// Accumulate `dq · ∂Q/∂params` into `grad` (flat, in [`Critic::params`]
    /// order) and return `dq · ∂Q/∂action`.
    pub fn backward(&self, trace: &CriticTrace, dq: f64, grad: &mut [f64]) -> [f64; ACTION_SIZE] {
        let (n_obs, n_act) = (self.observation.num_params(), self.action.num_params());
        let (g_obs, rest) = grad.split_at_mut(n_obs);
        let (g_act, g_head) = rest.split_at_mut(n_act);
        let upstream = self.head.backward(&trace.head, &[dq], g_head);
        let merged = trace.merged.output();
        let through: Vec<f64> = upstream
            .iter()
            .zip(merged)
            .map(|(g, m)| if *m > 0.0 { *g } else { 0.0 })
            .collect();
        self.observation.backward(&trace.observation, &through, g_obs);
        let ga = self.action.backward(&trace.action, &through, g_act);
        [ga[0], ga[1], ga[2]]
    }

    /// `∂Q/∂action` without touching parameter gradients.
    pub fn action_gradient(&self, trace: &CriticTrace) -> [f64; ACTION_SIZE] {
        let mut scratch = vec![0.0; self.num_params()];
        self.backward(trace, 1.0, &mut scratch)
    }

    pub fn num_params(&self) -> usize {
        self.observation.num_params() + self.action.num_params() + self.head.num_params()
    }

    pub fn params(&self) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.num_params());
        p.extend_from_slice(self.observation.params());
        p.extend_from_slice(self.action.params());
        p.extend_from_slice(self.head.params());
        p
    }

    pub fn set_params(&mut self, p: &[f64]) {
        assert_eq!(p.len(), self.num_params());
        let (a, rest) = p.split_at(self.observation.num_params());
        let (b, c) = rest.split_at(self.action.num_params());
        self.observation.params_mut().copy_from_slice(a);
        self.action.params_mut().copy_from_slice(b);
        self.head.params_mut().copy_from_slice(c);
    }

    pub fn weight_mask(&self) -> Vec<bool> {
        let mut m = self.observation.weight_mask();
        m.extend(self.action.weight_mask());
        m.extend(self.head.weight_mask());
        m
    }

    pub fn same_architecture(&self, other: &Critic) -> bool {
        self.observation.same_architecture(&other.observation)
            && self.action.same_architecture(&other.action)
            && self.head.same_architecture(&other.head)
    }
}

/// Affine map between the tanh codomain and the input box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActionMap {
    pub u_min: [f64; 3],
    pub u_max: [f64; 3],
}

impl Default for ActionMap {
    fn default() -> Self {
        Self {
            u_min: ControlInput::MIN.0,
            u_max: ControlInput::MAX.0,
        }
    }
}

impl ActionMap {
    pub fn to_input(&self, a: &[f64; ACTION_SIZE]) -> ControlInput {
        let mut u = [0.0; 3];
        for c in 0..3 {
            let half = 0.5 * (self.u_max[c] - self.u_min[c]);
            u[c] = (self.u_min[c] + (a[c] + 1.0) * half).clamp(self.u_min[c], self.u_max[c]);
        }
        ControlInput(u)
    }

    pub fn to_action(&self, u: &ControlInput) -> [f64; ACTION_SIZE] {
        let mut a = [0.0; 3];
        for c in 0..3 {
            let half = 0.5 * (self.u_max[c] - self.u_min[c]);
            a[c] = if half > 0.0 { (u.0[c] - self.u_min[c]) / half - 1.0 } else { 0.0 };
        }
        a
    }

    pub fn half_range(&self) -> [f64; 3] {
        [
            0.5 * (self.u_max[0] - self.u_min[0]),
            0.5 * (self.u_max[1] - self.u_min[1]),
            0.5 * (self.u_max[2] - self.u_min[2]),
        ]
    }
}

/// Blend `target ← τ·main + (1 − τ)·target` parameter by parameter.
pub fn soft_update_params(target: &mut [f64], main: &[f64], tau: f64) {
    if tau == 1.0 {
        target.copy_from_slice(main);
        return;
    }
    if tau == 0.0 {
        return;
    }
    for (t, m) in target.iter_mut().zip(main) {
        *t = tau * m + (1.0 - tau) * *t;
    }
}

pub fn soft_update_actor(target: &mut Actor, main: &Actor, tau: f64) -> Result<(), DdpgError> {
    if !target.net.same_architecture(&main.net) {
        return Err(DdpgError::ArchitectureMismatch);
    }
    soft_update_params(target.net.params_mut(), main.net.params(), tau);
    Ok(())
}

pub fn soft_update_critic(target: &mut Critic, main: &Critic, tau: f64) -> Result<(), DdpgError> {
    if !target.same_architecture(main) {
        return Err(DdpgError::ArchitectureMismatch);
    }
    soft_update_params(target.observation.params_mut(), main.observation.params(), tau);
    soft_update_params(target.action.params_mut(), main.action.params(), tau);
    soft_update_params(target.head.params_mut(), main.head.params(), tau);
    Ok(())
}
