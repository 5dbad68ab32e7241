//! Economic profit, constraint metrics and the head-to-head comparison of
//! controllers on a shared scenario.

mod compare;
mod plot;

pub use compare::{
    compare_controllers, run_comparison, Comparison, ComparisonReport, ControllerReport, Scenario, Timing,
    BASELINE_NAME, MPC_NAME, RL_NAME,
};
pub use plot::{emit_plots, PLOT_FILES};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::Measurement;
use crate::mpc::OutputBounds;
use crate::simulate::{SimulationError, Trajectory, TrajectoryIoError};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("trajectory carries no unit tag")]
    UnitError,
    #[error("invalid interval: {0}")]
    Interval(String),
    #[error("invalid profit parameters: {0}")]
    InvalidParams(String),
    #[error("{controller}: {source}")]
    Controller { controller: String, source: SimulationError },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("trajectory output failed: {0}")]
    Trajectory(#[from] TrajectoryIoError),
}

/// Prices of the economic profit indicator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EpiParams {
    /// CO₂ price (Hfl·kg⁻¹).
    pub c_co2: f64,
    /// Heating energy price (Hfl·J⁻¹).
    pub c_q: f64,
    /// Fixed income term (Hfl·m⁻²).
    pub c_pri_1: f64,
    /// Lettuce price (Hfl·kg⁻¹·m⁻²).
    pub c_pri_2: f64,
}

impl Default for EpiParams {
    fn default() -> Self {
        Self {
            c_co2: 42e-2,
            c_q: 6.35e-9,
            c_pri_1: 1.8,
            c_pri_2: 16.0,
        }
    }
}

impl EpiParams {
    pub fn validate(&self) -> Result<(), EvalError> {
        let all = [self.c_co2, self.c_q, self.c_pri_1, self.c_pri_2];
        if all.iter().all(|v| v.is_finite() && *v >= 0.0) {
            Ok(())
        } else {
            Err(EvalError::InvalidParams("all prices must be finite and nonnegative".into()))
        }
    }
}

/// Economic profit (Hfl·m⁻²) between sample times `t_b` and `t_f`: income
/// from dry matter `x1(t_f)` (kg·m⁻²) minus the cost of CO₂ (`u1`, mg·m⁻²·s⁻¹,
/// converted to kg) and heating energy (`u3`, W·m⁻²) held over each step.
pub fn epi(traj: &Trajectory, params: &EpiParams, t_b: f64, t_f: f64) -> Result<f64, EvalError> {
    if traj.units.is_none() {
        return Err(EvalError::UnitError);
    }
    let kb = sample_index(traj, t_b)?;
    let kf = sample_index(traj, t_f)?;
    if kb > kf {
        return Err(EvalError::Interval(format!("t_b = {t_b} lies after t_f = {t_f}")));
    }
    let h = traj.sample_period;
    let cost: f64 = traj.inputs[kb..kf]
        .iter()
        .map(|u| (params.c_q * u.heating() + params.c_co2 * u.co2_supply() * 1e-6) * h)
        .sum();
    Ok(params.c_pri_1 + params.c_pri_2 * traj.states[kf].dry_matter() - cost)
}

/// [`epi`] over the whole trajectory.
pub fn epi_total(traj: &Trajectory, params: &EpiParams) -> Result<f64, EvalError> {
    let (t_b, t_f) = match (traj.times.first(), traj.times.last()) {
        (Some(b), Some(f)) => (*b, *f),
        _ => return Err(EvalError::Interval("empty trajectory".into())),
    };
    epi(traj, params, t_b, t_f)
}

fn sample_index(traj: &Trajectory, t: f64) -> Result<usize, EvalError> {
    let tol = 1e-6 * traj.sample_period.max(1.0);
    traj.times
        .iter()
        .position(|s| (s - t).abs() <= tol)
        .ok_or_else(|| EvalError::Interval(format!("t = {t} is not a sample time of the trajectory")))
}

/// Band violation statistics for one output over the post-initial samples.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ViolationStats {
    /// Fraction of samples outside the band.
    pub fraction: f64,
    /// Largest distance to the band.
    pub max: f64,
    /// Mean distance to the band over all samples.
    pub mean: f64,
}

/// Bounds that apply to measurement `k` of a trajectory: the band follows
/// the radiation of the weather record in force at that sample.
pub fn bounds_for_sample(traj: &Trajectory, k: usize, co2_max: f64, humidity_max: f64) -> Option<OutputBounds> {
    let record = traj.weather.get(k).or(traj.weather.last())?;
    let config = crate::mpc::MpcConfig {
        co2_max,
        humidity_max,
        ..Default::default()
    };
    Some(OutputBounds::for_radiation(record.radiation(), &config))
}

/// Violation statistics of `y1..y4` for samples `1..=n`.
pub fn violations(traj: &Trajectory, co2_max: f64, humidity_max: f64) -> [ViolationStats; 4] {
    let mut out = [ViolationStats::default(); 4];
    let n = traj.steps();
    if n == 0 {
        return out;
    }
    for k in 1..=n {
        let Some(bounds) = bounds_for_sample(traj, k, co2_max, humidity_max) else {
            continue;
        };
        let v = bounds.violation(&traj.measurements[k]);
        for i in 0..4 {
            if v[i] > 0.0 {
                out[i].fraction += 1.0;
            }
            out[i].max = out[i].max.max(v[i]);
            out[i].mean += v[i];
        }
    }
    for s in out.iter_mut() {
        s.fraction /= n as f64;
        s.mean /= n as f64;
    }
    out
}

/// Totals of resource use over the trajectory.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ResourceUse {
    /// Supplied CO₂ (kg·m⁻²).
    pub co2_kg: f64,
    /// Heating energy (J·m⁻²).
    pub heating_j: f64,
    /// Ventilation integral (mm·s⁻¹ · s).
    pub ventilation: f64,
}

pub fn resource_use(traj: &Trajectory) -> ResourceUse {
    let h = traj.sample_period;
    traj.inputs.iter().fold(ResourceUse::default(), |acc, u| ResourceUse {
        co2_kg: acc.co2_kg + u.co2_supply() * 1e-6 * h,
        heating_j: acc.heating_j + u.heating() * h,
        ventilation: acc.ventilation + u.ventilation() * h,
    })
}

/// Final dry matter `y1` (g·m⁻²).
pub fn final_dry_matter(traj: &Trajectory) -> f64 {
    traj.measurements.last().map(Measurement::dry_matter).unwrap_or(f64::NAN)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ControlInput, GreenhouseState, WeatherRecord};
    use crate::simulate::UnitTag;

    fn flat(n: usize, x1_final: f64, u: ControlInput) -> Trajectory {
        let h = 900.0;
        let mut states = vec![GreenhouseState([0.0, 0.001, 15.0, 0.008]); n + 1];
        states[n].0[0] = x1_final;
        Trajectory {
            sample_period: h,
            units: Some(UnitTag::Model),
            times: (0..=n).map(|k| k as f64 * h).collect(),
            measurements: vec![Measurement([0.0, 0.5, 17.0, 60.0]); n + 1],
            states,
            inputs: vec![u; n],
            weather: vec![WeatherRecord::new(0.0, [100.0, 7e-4, 10.0, 6e-3]); n],
            controller_seconds: vec![0.0; n],
        }
    }

    #[test]
    fn defaults_match_price_table() {
        let p = EpiParams::default();
        assert_eq!((p.c_co2, p.c_q, p.c_pri_1, p.c_pri_2), (0.42, 6.35e-9, 1.8, 16.0));
        p.validate().unwrap();
        assert!(EpiParams { c_q: -1.0, ..p }.validate().is_err());
    }

    #[test]
    fn intercept_and_yield_terms() {
        let p = EpiParams::default();
        let t = flat(10, 0.0, ControlInput::ZERO);
        assert_eq!(epi_total(&t, &p).unwrap(), 1.8);
        let t = flat(10, 0.005, ControlInput::ZERO);
        assert!((epi_total(&t, &p).unwrap() - 1.88).abs() < 1e-15);
    }

    #[test]
    fn input_costs_use_unit_conversions() {
        let p = EpiParams::default();
        let t = flat(4, 0.0, ControlInput([1.0, 3.0, 100.0]));
        let expected = 1.8 - 4.0 * 900.0 * (6.35e-9 * 100.0 + 0.42 * 1e-6);
        assert!((epi_total(&t, &p).unwrap() - expected).abs() < 1e-15);
    }

    #[test]
    fn partial_interval_counts_inputs_in_range() {
        let p = EpiParams::default();
        let mut t = flat(4, 0.0, ControlInput([0.0, 0.0, 100.0]));
        t.states[2].0[0] = 0.002;
        let v = epi(&t, &p, 900.0, 1800.0).unwrap();
        let expected = 1.8 + 16.0 * 0.002 - 900.0 * 6.35e-9 * 100.0;
        assert!((v - expected).abs() < 1e-15);
        assert!(matches!(epi(&t, &p, 1800.0, 900.0), Err(EvalError::Interval(_))));
        assert!(matches!(epi(&t, &p, 100.0, 900.0), Err(EvalError::Interval(_))));
    }

    #[test]
    fn untagged_trajectory_is_rejected() {
        let mut t = flat(2, 0.0, ControlInput::ZERO);
        t.units = None;
        assert!(matches!(epi_total(&t, &EpiParams::default()), Err(EvalError::UnitError)));
    }

    #[test]
    fn violations_follow_radiation_band() {
        let mut t = flat(4, 0.0, ControlInput::ZERO);
        // Day band (15, 20): 21 °C is one degree over on one of four samples.
        t.measurements[2].0[2] = 21.0;
        // CO₂ over its limit on another.
        t.measurements[4].0[1] = 1.7;
        let v = violations(&t, 1.6, 70.0);
        assert_eq!(v[2].fraction, 0.25);
        assert_eq!(v[2].max, 1.0);
        assert_eq!(v[1].fraction, 0.25);
        assert!((v[1].max - 0.1).abs() < 1e-12);
        assert_eq!(v[0].fraction, 0.0);
        assert_eq!(v[3].fraction, 0.0);
    }

    #[test]
    fn resource_totals() {
        let t = flat(3, 0.0, ControlInput([1.2, 7.5, 150.0]));
        let r = resource_use(&t);
        assert!((r.co2_kg - 3.0 * 900.0 * 1.2e-6).abs() < 1e-18);
        assert_eq!(r.heating_j, 3.0 * 900.0 * 150.0);
        assert_eq!(r.ventilation, 3.0 * 900.0 * 7.5);
    }
}
