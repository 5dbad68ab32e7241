use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{epi_total, final_dry_matter, resource_use, violations, EpiParams, EvalError, ResourceUse, ViolationStats};
use crate::ddpg::{AgentBundle, RlController};
use crate::model::{ControlInput, GreenhouseModel, GreenhouseState};
use crate::mpc::{MpcConfig, MpcController};
use crate::simulate::{simulate, ConstantController, Controller, Trajectory};
use crate::weather::WeatherSeries;

pub const MPC_NAME: &str = "mpc";
pub const RL_NAME: &str = "rl";
pub const BASELINE_NAME: &str = "zero";

/// Shared closed-loop setting for all controllers in a comparison.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub model: GreenhouseModel,
    pub x0: GreenhouseState,
    pub weather: WeatherSeries,
    pub steps: usize,
}

/// Wall-clock cost of the controller calls.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub total_s: f64,
    pub mean_step_s: f64,
    pub max_step_s: f64,
}

impl Timing {
    fn from_steps(seconds: &[f64]) -> Self {
        let total_s: f64 = seconds.iter().sum();
        Self {
            total_s,
            mean_step_s: if seconds.is_empty() { 0.0 } else { total_s / seconds.len() as f64 },
            max_step_s: seconds.iter().copied().fold(0.0, f64::max),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct OutputViolations {
    pub dry_matter: ViolationStats,
    pub co2: ViolationStats,
    pub temperature: ViolationStats,
    pub humidity: ViolationStats,
}

impl From<[ViolationStats; 4]> for OutputViolations {
    fn from(v: [ViolationStats; 4]) -> Self {
        Self {
            dry_matter: v[0],
            co2: v[1],
            temperature: v[2],
            humidity: v[3],
        }
    }
}

/// Metrics of one controller's closed-loop run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerReport {
    pub name: String,
    /// Economic profit indicator (Hfl·m⁻²).
    pub epi: f64,
    /// Final dry matter `y1` (g·m⁻²).
    pub final_y1: f64,
    pub violations: OutputViolations,
    pub resources: ResourceUse,
    pub timing: Timing,
    /// Solver outcome counts for optimization-based controllers.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub solver_status: Option<BTreeMap<String, usize>>,
    /// Trajectory CSV, relative to the report file.
    pub trajectory: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub steps: usize,
    pub sample_period: f64,
    pub x0: [f64; 4],
    pub epi_params: EpiParams,
    pub co2_max: f64,
    pub humidity_max: f64,
    pub controllers: Vec<ControllerReport>,
}

impl ComparisonReport {
    pub fn controller(&self, name: &str) -> Option<&ControllerReport> {
        self.controllers.iter().find(|c| c.name == name)
    }

    /// Copy with every wall-clock field zeroed, for reproducibility checks.
    pub fn without_timing(&self) -> Self {
        let mut r = self.clone();
        for c in &mut r.controllers {
            c.timing = Timing::default();
        }
        r
    }

    /// Ratio of mean per-step controller time `a / b`.
    pub fn time_ratio(&self, a: &str, b: &str) -> Option<f64> {
        Some(self.controller(a)?.timing.mean_step_s / self.controller(b)?.timing.mean_step_s)
    }
}

/// Report plus the trajectories it was computed from, in report order.
#[derive(Debug, Clone)]
pub struct Comparison {
    pub report: ComparisonReport,
    pub trajectories: Vec<Trajectory>,
    pub mpc: Option<MpcController>,
}

impl Comparison {
    pub fn trajectory(&self, name: &str) -> Option<&Trajectory> {
        let i = self.report.controllers.iter().position(|c| c.name == name)?;
        self.trajectories.get(i)
    }

    /// Write `report.json`, one trajectory CSV per controller and the MPC
    /// solve log into `dir`. Returns the written paths.
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>, EvalError> {
        std::fs::create_dir_all(dir)?;
        let mut written = Vec::new();
        for (c, t) in self.report.controllers.iter().zip(&self.trajectories) {
            let path = dir.join(&c.trajectory);
            t.save_csv(&path)?;
            written.push(path);
        }
        if let Some(mpc) = &self.mpc {
            let path = dir.join("mpc_solve_log.csv");
            mpc.save_solve_log(&path).map_err(|e| EvalError::Io(std::io::Error::other(e)))?;
            written.push(path);
        }
        let path = dir.join("report.json");
        std::fs::write(&path, serde_json::to_string_pretty(&self.report)? + "\n")?;
        written.push(path);
        Ok(written)
    }
}

/// Run every named controller on `scenario` and assemble the report.
pub fn compare_controllers(
    scenario: &Scenario,
    controllers: &mut [(&str, &mut dyn Controller)],
    params: &EpiParams,
    bounds: (f64, f64),
) -> Result<Comparison, EvalError> {
    params.validate()?;
    let (co2_max, humidity_max) = bounds;
    let mut reports = Vec::with_capacity(controllers.len());
    let mut trajectories = Vec::with_capacity(controllers.len());
    for (name, controller) in controllers.iter_mut() {
        log::info!("running {name} for {} steps", scenario.steps);
        let traj = simulate(&scenario.model, scenario.x0, *controller, &scenario.weather, scenario.steps).map_err(
            |source| EvalError::Controller {
                controller: name.to_string(),
                source,
            },
        )?;
        reports.push(ControllerReport {
            name: name.to_string(),
            epi: epi_total(&traj, params)?,
            final_y1: final_dry_matter(&traj),
            violations: violations(&traj, co2_max, humidity_max).into(),
            resources: resource_use(&traj),
            timing: Timing::from_steps(&traj.controller_seconds),
            solver_status: None,
            trajectory: format!("trajectory_{name}.csv"),
        });
        trajectories.push(traj);
    }
    Ok(Comparison {
        report: ComparisonReport {
            steps: scenario.steps,
            sample_period: scenario.weather.sample_period(),
            x0: scenario.x0.0,
            epi_params: *params,
            co2_max,
            humidity_max,
            controllers: reports,
        },
        trajectories,
        mpc: None,
    })
}

/// MPC, the trained agent (when given) and the zero-input baseline on the
/// same scenario.
pub fn run_comparison(
    scenario: &Scenario,
    mpc_config: &MpcConfig,
    bundle: Option<&AgentBundle>,
    params: &EpiParams,
) -> Result<Comparison, EvalError> {
    let mut mpc = MpcController::new(scenario.model.clone(), mpc_config.clone());
    let mut rl = bundle.map(|b| RlController::new(b.clone()));
    let mut zero = ConstantController(ControlInput::ZERO);
    let mut entries: Vec<(&str, &mut dyn Controller)> = vec![(MPC_NAME, &mut mpc)];
    if let Some(rl) = rl.as_mut() {
        entries.push((RL_NAME, rl));
    }
    entries.push((BASELINE_NAME, &mut zero));
    let mut cmp = compare_controllers(scenario, &mut entries, params, (mpc_config.co2_max, mpc_config.humidity_max))?;
    let mut counts = BTreeMap::new();
    for e in mpc.solve_log() {
        *counts.entry(e.status.as_str().to_string()).or_insert(0) += 1;
    }
    if let Some(r) = cmp.report.controllers.iter_mut().find(|c| c.name == MPC_NAME) {
        r.solver_status = Some(counts);
    }
    cmp.mpc = Some(mpc);
    Ok(cmp)
}
