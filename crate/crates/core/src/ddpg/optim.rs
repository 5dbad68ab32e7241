//! First-order optimizers over flat parameter vectors.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

/// Adam (β₁ = 0.9, β₂ = 0.999, ε = 1e−8) or plain gradient descent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Optimizer {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPSILON: f64 = 1e-8;

impl Optimizer {
    pub fn new(kind: OptimizerKind, learning_rate: f64, n: usize) -> Self {
        let moments = if kind == OptimizerKind::Adam { n } else { 0 };
        Self {
            kind,
            learning_rate,
            m: vec![0.0; moments],
            v: vec![0.0; moments],
            t: 0,
        }
    }

    /// Descent step `params ← params − η·step(grad)`.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.iter_mut().zip(grad) {
                    *p -= self.learning_rate * g;
                }
            }
            OptimizerKind::Adam => {
                self.t += 1;
                let c1 = 1.0 - BETA1.powi(self.t as i32);
                let c2 = 1.0 - BETA2.powi(self.t as i32);
                for i in 0..params.len() {
                    self.m[i] = BETA1 * self.m[i] + (1.0 - BETA1) * grad[i];
                    self.v[i] = BETA2 * self.v[i] + (1.0 - BETA2) * grad[i] * grad[i];
                    let m_hat = self.m[i] / c1;
                    let v_hat = self.v[i] / c2;
                    params[i] -= self.learning_rate * m_hat / (v_hat.sqrt() + EPSILON);
                }
            }
        }
    }
}

/// Add `λ·w` to the gradient of every weight (biases are not regularized).
pub fn add_l2(grad: &mut [f64], params: &[f64], mask: &[bool], lambda: f64) {
    if lambda == 0.0 {
        return;
    }
    for ((g, p), m) in grad.iter_mut().zip(params).zip(mask) {
        if *m {
            *g += lambda * p;
        }
    }
}

/// Rescale `grad` so its Euclidean norm does not exceed `threshold`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grad: &mut [f64], threshold: f64) -> f64 {
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if threshold > 0.0 && norm > threshold {
        let s = threshold / norm;
        for g in grad.iter_mut() {
            *g *= s;
        }
    }
    norm
}
