//! Closed-loop rollouts and trajectory storage.

use std::io::{Read, Write};
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{ControlInput, GreenhouseModel, GreenhouseState, Measurement, ModelError, WeatherRecord};
use crate::weather::WeatherSeries;

/// CSV header for exported trajectories.
pub const TRAJECTORY_HEADER: [&str; 17] = [
    "k", "t", "x1", "x2", "x3", "x4", "u1", "u2", "u3", "d1", "d2", "d3", "d4", "y1", "y2", "y3", "y4",
];

/// Failure reported by a controller callback.
#[derive(Debug, Error, Clone, PartialEq)]
#[error("{0}")]
pub struct ControlError(pub String);

#[derive(Debug, Error)]
pub enum SimulationError {
    #[error("weather series has {available} records but {required} steps were requested")]
    WeatherTooShort { available: usize, required: usize },
    #[error("model failure at step {step}: {source}")]
    Model { step: usize, source: ModelError },
    #[error("controller failure at step {step}: {source}")]
    Controller { step: usize, source: ControlError },
}

#[derive(Debug, Error)]
pub enum TrajectoryIoError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

/// What a controller sees at step `k`.
#[derive(Debug, Clone, Copy)]
pub struct ControlContext<'a> {
    pub k: usize,
    pub state: &'a GreenhouseState,
    pub measurement: &'a Measurement,
    /// Weather from step `k` to the end of the scenario.
    pub weather: &'a [WeatherRecord],
    /// Input applied over the previous step (`u(0) = 0` before the first).
    pub previous_input: ControlInput,
    pub sample_period: f64,
}

pub trait Controller {
    fn control(&mut self, ctx: &ControlContext<'_>) -> Result<ControlInput, ControlError>;
}

impl<F> Controller for F
where
    F: FnMut(&ControlContext<'_>) -> Result<ControlInput, ControlError>,
{
    fn control(&mut self, ctx: &ControlContext<'_>) -> Result<ControlInput, ControlError> {
        self(ctx)
    }
}

/// Applies the same input at every step.
#[derive(Debug, Clone, Copy)]
pub struct ConstantController(pub ControlInput);

impl Controller for ConstantController {
    fn control(&mut self, _ctx: &ControlContext<'_>) -> Result<ControlInput, ControlError> {
        Ok(self.0)
    }
}

/// Tag stating which unit system a trajectory is expressed in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum UnitTag {
    /// States and inputs in the model's native units, `y` in measurement units.
    Model,
}

/// Recorded closed-loop run. `states`, `measurements` and `times` have
/// `n + 1` entries; `inputs` and `weather` have `n` (the input and weather
/// held over `[t_k, t_k + h)`).
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub sample_period: f64,
    pub units: Option<UnitTag>,
    pub times: Vec<f64>,
    pub states: Vec<GreenhouseState>,
    pub measurements: Vec<Measurement>,
    pub inputs: Vec<ControlInput>,
    pub weather: Vec<WeatherRecord>,
    /// Wall-clock seconds spent in the controller per step.
    pub controller_seconds: Vec<f64>,
}

impl Trajectory {
    pub fn steps(&self) -> usize {
        self.inputs.len()
    }

    pub fn final_state(&self) -> &GreenhouseState {
        self.states.last().expect("trajectory always holds the initial state")
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), TrajectoryIoError> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(TRAJECTORY_HEADER)?;
        for k in 0..self.states.len() {
            let mut row = Vec::with_capacity(17);
            row.push(k.to_string());
            row.push(fmt_f64(self.times[k]));
            row.extend(self.states[k].0.iter().map(|v| fmt_f64(*v)));
            match self.inputs.get(k) {
                Some(u) => row.extend(u.0.iter().map(|v| fmt_f64(*v))),
                None => row.extend(std::iter::repeat_n(String::new(), 3)),
            }
            match self.weather.get(k) {
                Some(d) => row.extend(d.d.iter().map(|v| fmt_f64(*v))),
                None => row.extend(std::iter::repeat_n(String::new(), 4)),
            }
            row.extend(self.measurements[k].0.iter().map(|v| fmt_f64(*v)));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<(), TrajectoryIoError> {
        let file = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(file))
    }

    /// Parse a trajectory written by [`Trajectory::write_csv`]. Timing
    /// information is not part of the file and comes back empty.
    pub fn read_csv<R: Read>(reader: R) -> Result<Trajectory, TrajectoryIoError> {
        let mut r = csv::Reader::from_reader(reader);
        let headers = r.headers()?.clone();
        if headers.iter().collect::<Vec<_>>() != TRAJECTORY_HEADER {
            return Err(TrajectoryIoError::Parse {
                line: 1,
                message: format!("unexpected header `{}`", headers.iter().collect::<Vec<_>>().join(",")),
            });
        }
        let mut traj = Trajectory {
            sample_period: f64::NAN,
            units: Some(UnitTag::Model),
            times: Vec::new(),
            states: Vec::new(),
            measurements: Vec::new(),
            inputs: Vec::new(),
            weather: Vec::new(),
            controller_seconds: Vec::new(),
        };
        for (i, rec) in r.records().enumerate() {
            let line = i + 2;
            let rec = rec?;
            let field = |j: usize| -> Result<Option<f64>, TrajectoryIoError> {
                let s = rec.get(j).unwrap_or("").trim();
                if s.is_empty() {
                    return Ok(None);
                }
                s.parse::<f64>().map(Some).map_err(|e| TrajectoryIoError::Parse {
                    line,
                    message: format!("column {}: {e}", TRAJECTORY_HEADER[j]),
                })
            };
            let req = |j: usize| -> Result<f64, TrajectoryIoError> {
                field(j)?.ok_or_else(|| TrajectoryIoError::Parse {
                    line,
                    message: format!("missing {}", TRAJECTORY_HEADER[j]),
                })
            };
            let t = req(1)?;
            traj.times.push(t);
            traj.states.push(GreenhouseState([req(2)?, req(3)?, req(4)?, req(5)?]));
            traj.measurements.push(Measurement([req(13)?, req(14)?, req(15)?, req(16)?]));
            if let (Some(u1), Some(u2), Some(u3)) = (field(6)?, field(7)?, field(8)?) {
                traj.inputs.push(ControlInput([u1, u2, u3]));
            }
            if let (Some(d1), Some(d2), Some(d3), Some(d4)) = (field(9)?, field(10)?, field(11)?, field(12)?) {
                traj.weather.push(WeatherRecord::new(t, [d1, d2, d3, d4]));
            }
        }
        if traj.times.len() >= 2 {
            traj.sample_period = traj.times[1] - traj.times[0];
        }
        Ok(traj)
    }
}

/// Shortest representation that parses back to the same `f64`.
pub(crate) fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

/// Run `controller` in closed loop for `n_steps` steps of the series' sample
/// period. Controller outputs are clamped into the input box before use.
pub fn simulate<C: Controller + ?Sized>(
    model: &GreenhouseModel,
    x0: GreenhouseState,
    controller: &mut C,
    weather: &WeatherSeries,
    n_steps: usize,
) -> Result<Trajectory, SimulationError> {
    let records = weather.records();
    if records.len() < n_steps {
        return Err(SimulationError::WeatherTooShort {
            available: records.len(),
            required: n_steps,
        });
    }
    let h = weather.sample_period();
    let t0 = records.first().map(|r| r.t).unwrap_or(0.0);

    let mut traj = Trajectory {
        sample_period: h,
        units: Some(UnitTag::Model),
        times: Vec::with_capacity(n_steps + 1),
        states: Vec::with_capacity(n_steps + 1),
        measurements: Vec::with_capacity(n_steps + 1),
        inputs: Vec::with_capacity(n_steps),
        weather: Vec::with_capacity(n_steps),
        controller_seconds: Vec::with_capacity(n_steps),
    };
    let mut x = x0;
    let mut y = model.measure(&x);
    let mut previous = ControlInput::ZERO;
    traj.times.push(t0);
    traj.states.push(x);
    traj.measurements.push(y);

    for k in 0..n_steps {
        let ctx = ControlContext {
            k,
            state: &x,
            measurement: &y,
            weather: &records[k..],
            previous_input: previous,
            sample_period: h,
        };
        let started = Instant::now();
        let raw = controller
            .control(&ctx)
            .map_err(|source| SimulationError::Controller { step: k, source })?;
        traj.controller_seconds.push(started.elapsed().as_secs_f64());
        let u = raw.clamped(&ControlInput::MIN, &ControlInput::MAX);

        let d = records[k];
        let mut next = model
            .rk4_step(&x, &u, &d, h)
            .map_err(|source| SimulationError::Model { step: k, source })?;
        if next.clamp_nonnegative() {
            log::warn!("step {k}: negative state clamped to zero");
        }
        x = next;
        y = model.measure(&x);
        previous = u;
        traj.inputs.push(u);
        traj.weather.push(d);
        traj.times.push(t0 + (k + 1) as f64 * h);
        traj.states.push(x);
        traj.measurements.push(y);
    }
    Ok(traj)
}
