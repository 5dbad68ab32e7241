//! Receding-horizon nonlinear MPC.
//!
//! At every step the input sequence over the prediction horizon is the only
//! decision variable (single shooting); predicted states come from forward
//! simulation of the model. Input box and rate limits are hard. Output
//! bounds are softened with a quadratic penalty on the smallest slack that
//! satisfies them, so every problem instance is feasible.

mod controller;
mod cost;
mod solver;

pub use controller::{MpcController, SolveLogEntry, SOLVE_LOG_HEADER};
pub use cost::{rollout_cost, rollout_cost_and_gradient, RolloutCost};
pub use solver::solve_ocp;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{ControlInput, Measurement, ModelError, WeatherRecord};

/// Radiation (W·m⁻²) below which the night temperature band applies.
pub const NIGHT_RADIATION_THRESHOLD: f64 = 10.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MpcError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("input sequence has {got} steps, horizon is {expected}")]
    HorizonMismatch { expected: usize, got: usize },
    #[error("weather window is empty")]
    EmptyWeather,
    #[error("invalid MPC configuration: {0}")]
    InvalidConfig(String),
}

/// Controller settings. Defaults follow the published simulation settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MpcConfig {
    /// Prediction horizon in steps (24 × 15 min = 6 h).
    pub horizon: usize,
    /// Weight on terminal dry matter `y1` (g·m⁻²).
    pub yield_weight: f64,
    /// Per-step weights on the three inputs.
    pub input_weights: [f64; 3],
    pub u_min: [f64; 3],
    pub u_max: [f64; 3],
    /// Per-step rate limit; `u_max / 10` when unset.
    pub rate_limit: Option<[f64; 3]>,
    /// Weight on squared output-bound slack.
    pub slack_weight: f64,
    /// Upper bound on `y2` (ppm·10³).
    pub co2_max: f64,
    /// Upper bound on `y4` (%).
    pub humidity_max: f64,
    /// Use the radiation at the start of the horizon for the whole
    /// temperature band instead of the per-step radiation.
    pub band_at_k0: bool,
    pub max_iterations: usize,
    /// Stop once the projected gradient in normalized coordinates falls
    /// below this value.
    pub gradient_tolerance: f64,
    /// Stop after three iterations with relative objective decrease below
    /// this value.
    pub objective_tolerance: f64,
    /// L-BFGS memory length.
    pub memory: usize,
}

impl Default for MpcConfig {
    fn default() -> Self {
        Self {
            horizon: 24,
            yield_weight: 1e3,
            input_weights: [10.0, 1.0, 1.0],
            u_min: ControlInput::MIN.0,
            u_max: ControlInput::MAX.0,
            rate_limit: None,
            slack_weight: 1e6,
            co2_max: 1.6,
            humidity_max: 70.0,
            band_at_k0: false,
            max_iterations: 300,
            gradient_tolerance: 1e-6,
            objective_tolerance: 1e-13,
            memory: 12,
        }
    }
}

impl MpcConfig {
    pub fn rate_limit(&self) -> [f64; 3] {
        self.rate_limit
            .unwrap_or([self.u_max[0] / 10.0, self.u_max[1] / 10.0, self.u_max[2] / 10.0])
    }

    pub fn u_min(&self) -> ControlInput {
        ControlInput(self.u_min)
    }

    pub fn u_max(&self) -> ControlInput {
        ControlInput(self.u_max)
    }

    pub fn validate(&self) -> Result<(), MpcError> {
        let bad = |m: &str| Err(MpcError::InvalidConfig(m.to_string()));
        if self.horizon == 0 {
            return bad("horizon must be at least 1");
        }
        if !(self.yield_weight >= 0.0 && self.slack_weight >= 0.0 && self.input_weights.iter().all(|w| *w >= 0.0)) {
            return bad("weights must be nonnegative");
        }
        let rate = self.rate_limit();
        for i in 0..3 {
            if !(self.u_min[i] <= self.u_max[i]) {
                return bad("u_min must not exceed u_max");
            }
            if !(rate[i] >= 0.0) {
                return bad("rate limits must be nonnegative");
            }
        }
        if self.memory == 0 {
            return bad("memory must be at least 1");
        }
        Ok(())
    }
}

/// Night band `(10, 15)` °C when radiation is below 10 W·m⁻², day band
/// `(15, 20)` °C otherwise.
pub fn temperature_band(radiation: f64) -> (f64, f64) {
    if radiation < NIGHT_RADIATION_THRESHOLD {
        (10.0, 15.0)
    } else {
        (15.0, 20.0)
    }
}

/// Per-step output limits.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OutputBounds {
    pub min: [f64; 4],
    pub max: [f64; 4],
}

impl OutputBounds {
    pub fn for_radiation(radiation: f64, config: &MpcConfig) -> Self {
        let (t_lo, t_hi) = temperature_band(radiation);
        Self {
            min: [0.0, 0.0, t_lo, 0.0],
            max: [f64::INFINITY, config.co2_max, t_hi, config.humidity_max],
        }
    }

    /// Smallest nonnegative slack per output that makes `y` feasible.
    pub fn violation(&self, y: &Measurement) -> [f64; 4] {
        let mut v = [0.0; 4];
        for i in 0..4 {
            v[i] = (y.0[i] - self.max[i]).max(self.min[i] - y.0[i]).max(0.0);
        }
        v
    }

    /// Signed derivative of the squared violation with respect to `y`,
    /// divided by two.
    fn violation_direction(&self, y: &Measurement) -> [f64; 4] {
        let mut v = [0.0; 4];
        for i in 0..4 {
            v[i] = (y.0[i] - self.max[i]).max(0.0) - (self.min[i] - y.0[i]).max(0.0);
        }
        v
    }
}

/// Bounds applied to the prediction `j` steps into the horizon (`j ≥ 1`).
/// `weather` is the padded horizon window starting at the current step.
pub(crate) fn bounds_at(weather: &[WeatherRecord], j: usize, config: &MpcConfig) -> OutputBounds {
    let idx = if config.band_at_k0 { 0 } else { j.min(weather.len() - 1) };
    OutputBounds::for_radiation(weather[idx].radiation(), config)
}

/// Weather over the horizon: `horizon + 1` records starting at the current
/// step, repeating the last available record past the end of the scenario.
pub fn horizon_window(weather: &[WeatherRecord], horizon: usize) -> Result<Vec<WeatherRecord>, MpcError> {
    let last = *weather.last().ok_or(MpcError::EmptyWeather)?;
    Ok((0..=horizon).map(|j| weather.get(j).copied().unwrap_or(last)).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolveStatus {
    Converged,
    MaxIterations,
    /// No descent step could be found before the tolerances were met.
    Stalled,
    /// The solver failed and the previous input was held.
    Failed,
}

impl SolveStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            SolveStatus::Converged => "converged",
            SolveStatus::MaxIterations => "max_iterations",
            SolveStatus::Stalled => "stalled",
            SolveStatus::Failed => "failed",
        }
    }
}

/// Result of one finite-horizon solve.
#[derive(Debug, Clone, PartialEq)]
pub struct HorizonSolution {
    pub inputs: Vec<ControlInput>,
    /// Predicted outputs at steps `1..=horizon`.
    pub outputs: Vec<Measurement>,
    /// Output-bound slack at steps `1..=horizon`.
    pub slacks: Vec<[f64; 4]>,
    pub objective: f64,
    pub status: SolveStatus,
    pub iterations: usize,
    pub solve_seconds: f64,
}

impl HorizonSolution {
    pub fn max_slack(&self) -> f64 {
        self.slacks.iter().flatten().fold(0.0, |a, b| a.max(*b))
    }
}
