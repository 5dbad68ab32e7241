use crate::model::{ControlInput, GreenhouseModel, GreenhouseState, Measurement};
use crate::model::WeatherRecord;

use super::{bounds_at, horizon_window, MpcConfig, MpcError};

/// Objective value and predictions for one input sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutCost {
    pub objective: f64,
    /// States at steps `0..=horizon`.
    pub states: Vec<GreenhouseState>,
    /// Outputs at steps `1..=horizon`.
    pub outputs: Vec<Measurement>,
    /// Output-bound violations at steps `1..=horizon`.
    pub violations: Vec<[f64; 4]>,
}

/// Single-shooting objective
///
/// `J = −q_y·y1(N) + Σ_k Σ_j q_j·u_j(k) + w·Σ_k Σ_i s_i(k)²`
///
/// where `s(k)` is the least slack making `y(k)` satisfy its bounds. The
/// terminal yield term enters once.
pub fn rollout_cost(
    model: &GreenhouseModel,
    config: &MpcConfig,
    x0: &GreenhouseState,
    weather: &[WeatherRecord],
    inputs: &[ControlInput],
    h: f64,
) -> Result<RolloutCost, MpcError> {
    let n = config.horizon;
    if inputs.len() != n {
        return Err(MpcError::HorizonMismatch { expected: n, got: inputs.len() });
    }
    let window = horizon_window(weather, n)?;
    let mut states = Vec::with_capacity(n + 1);
    let mut outputs = Vec::with_capacity(n);
    let mut violations = Vec::with_capacity(n);
    let mut x = *x0;
    states.push(x);
    let mut input_cost = 0.0;
    let mut penalty = 0.0;
    for (j, u) in inputs.iter().enumerate() {
        input_cost += (0..3).map(|c| config.input_weights[c] * u.0[c]).sum::<f64>();
        x = model.rk4_step(&x, u, &window[j], h)?;
        let y = model.measure(&x);
        let v = bounds_at(&window, j + 1, config).violation(&y);
        penalty += v.iter().map(|s| s * s).sum::<f64>();
        states.push(x);
        outputs.push(y);
        violations.push(v);
    }
    let terminal = outputs.last().map(|y| y.dry_matter()).unwrap_or(0.0);
    Ok(RolloutCost {
        objective: -config.yield_weight * terminal + input_cost + config.slack_weight * penalty,
        states,
        outputs,
        violations,
    })
}

/// Objective plus its gradient with respect to every input, computed with a
/// backward (adjoint) sweep through the step sensitivities.
pub fn rollout_cost_and_gradient(
    model: &GreenhouseModel,
    config: &MpcConfig,
    x0: &GreenhouseState,
    weather: &[WeatherRecord],
    inputs: &[ControlInput],
    h: f64,
) -> Result<(RolloutCost, Vec<[f64; 3]>), MpcError> {
    let n = config.horizon;
    if inputs.len() != n {
        return Err(MpcError::HorizonMismatch { expected: n, got: inputs.len() });
    }
    let window = horizon_window(weather, n)?;
    let mut states = Vec::with_capacity(n + 1);
    let mut outputs = Vec::with_capacity(n);
    let mut violations = Vec::with_capacity(n);
    let mut sens = Vec::with_capacity(n);
    // ∂J/∂x(k) from the output terms at step k, k = 1..=n.
    let mut local = Vec::with_capacity(n);

    let mut x = *x0;
    states.push(x);
    let mut input_cost = 0.0;
    let mut penalty = 0.0;
    for (j, u) in inputs.iter().enumerate() {
        input_cost += (0..3).map(|c| config.input_weights[c] * u.0[c]).sum::<f64>();
        let s = model.rk4_step_with_sensitivity(&x, u, &window[j], h)?;
        x = s.next;
        let y = model.measure(&x);
        let bounds = bounds_at(&window, j + 1, config);
        let v = bounds.violation(&y);
        penalty += v.iter().map(|s| s * s).sum::<f64>();

        let dir = bounds.violation_direction(&y);
        let dy = model.measurement_jacobian(&x);
        let mut g = [0.0; 4];
        for i in 0..4 {
            if dir[i] != 0.0 {
                for c in 0..4 {
                    g[c] += 2.0 * config.slack_weight * dir[i] * dy[i][c];
                }
            }
        }
        if j + 1 == n {
            for c in 0..4 {
                g[c] -= config.yield_weight * dy[0][c];
            }
        }
        local.push(g);
        sens.push(s);
        states.push(x);
        outputs.push(y);
        violations.push(v);
    }

    let mut grad = vec![[0.0; 3]; n];
    let mut adjoint = [0.0; 4];
    for j in (0..n).rev() {
        for c in 0..4 {
            adjoint[c] += local[j][c];
        }
        let s = &sens[j];
        for c in 0..3 {
            grad[j][c] = config.input_weights[c] + (0..4).map(|i| s.du[i][c] * adjoint[i]).sum::<f64>();
        }
        let mut next = [0.0; 4];
        for c in 0..4 {
            next[c] = (0..4).map(|i| s.dx[i][c] * adjoint[i]).sum();
        }
        adjoint = next;
    }

    let terminal = outputs.last().map(|y| y.dry_matter()).unwrap_or(0.0);
    let cost = RolloutCost {
        objective: -config.yield_weight * terminal + input_cost + config.slack_weight * penalty,
        states,
        outputs,
        violations,
    };
    Ok((cost, grad))
}
