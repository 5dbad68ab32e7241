use std::io::Write;
use std::path::Path;

use crate::model::{ControlInput, GreenhouseModel};
use crate::simulate::{fmt_f64, ControlContext, ControlError, Controller};

use super::{solve_ocp, HorizonSolution, MpcConfig, SolveStatus};

pub const SOLVE_LOG_HEADER: [&str; 6] = ["k", "status", "objective", "iterations", "solve_time_s", "slack_max"];

/// One row of the per-step solver log.
#[derive(Debug, Clone, PartialEq)]
pub struct SolveLogEntry {
    pub k: usize,
    pub status: SolveStatus,
    pub objective: f64,
    pub iterations: usize,
    pub solve_seconds: f64,
    pub slack_max: f64,
}

/// Receding-horizon controller: solves the horizon problem at each step and
/// applies the first input. The previous solution, shifted by one step,
/// seeds the next solve. If a solve fails the previous input is held.
#[derive(Debug, Clone)]
pub struct MpcController {
    model: GreenhouseModel,
    config: MpcConfig,
    warm_start: Option<Vec<ControlInput>>,
    log: Vec<SolveLogEntry>,
    last: Option<HorizonSolution>,
}

impl MpcController {
    pub fn new(model: GreenhouseModel, config: MpcConfig) -> Self {
        Self {
            model,
            config,
            warm_start: None,
            log: Vec::new(),
            last: None,
        }
    }

    pub fn config(&self) -> &MpcConfig {
        &self.config
    }

    pub fn solve_log(&self) -> &[SolveLogEntry] {
        &self.log
    }

    /// Most recent successful horizon solution.
    pub fn last_solution(&self) -> Option<&HorizonSolution> {
        self.last.as_ref()
    }

    pub fn reset(&mut self) {
        self.warm_start = None;
        self.log.clear();
        self.last = None;
    }

    pub fn write_solve_log<W: Write>(&self, writer: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(SOLVE_LOG_HEADER)?;
        for e in &self.log {
            w.write_record([
                e.k.to_string(),
                e.status.as_str().to_string(),
                fmt_f64(e.objective),
                e.iterations.to_string(),
                fmt_f64(e.solve_seconds),
                fmt_f64(e.slack_max),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_solve_log(&self, path: &Path) -> Result<(), csv::Error> {
        let file = std::fs::File::create(path)?;
        self.write_solve_log(std::io::BufWriter::new(file))
    }
}

impl Controller for MpcController {
    fn control(&mut self, ctx: &ControlContext<'_>) -> Result<ControlInput, ControlError> {
        let result = solve_ocp(
            &self.model,
            &self.config,
            ctx.state,
            ctx.weather,
            &ctx.previous_input,
            self.warm_start.as_deref(),
            ctx.sample_period,
        );
        match result {
            Ok(sol) => {
                let u = sol.inputs[0];
                let mut next = sol.inputs[1..].to_vec();
                next.push(*sol.inputs.last().expect("horizon is at least one step"));
                self.warm_start = Some(next);
                self.log.push(SolveLogEntry {
                    k: ctx.k,
                    status: sol.status,
                    objective: sol.objective,
                    iterations: sol.iterations,
                    solve_seconds: sol.solve_seconds,
                    slack_max: sol.max_slack(),
                });
                self.last = Some(sol);
                Ok(u)
            }
            Err(e) => {
                log::warn!("step {}: MPC solve failed ({e}); holding previous input", ctx.k);
                self.log.push(SolveLogEntry {
                    k: ctx.k,
                    status: SolveStatus::Failed,
                    objective: f64::NAN,
                    iterations: 0,
                    solve_seconds: 0.0,
                    slack_max: f64::NAN,
                });
                self.warm_start = None;
                Ok(ctx.previous_input)
            }
        }
    }
}
