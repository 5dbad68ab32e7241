//! Subcommand implementations shared by the command-line binary and tests.
//! Each command writes into its own subdirectory of the configured output
//! directory, next to the resolved configuration it ran with.

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::config::{ConfigError, RunConfig, WeatherSource, RESOLVED_CONFIG_FILE};
use crate::ddpg::{AgentBundle, Checkpoint, DdpgError, EpisodeFactory, Trainer};
use crate::eval::{emit_plots, epi_total, run_comparison, ComparisonReport, EpiParams, EvalError, Scenario};
use crate::model::ControlInput;
use crate::simulate::{simulate, ConstantController, SimulationError, Trajectory, TrajectoryIoError};
use crate::weather::{load_csv, resample, synthesize, WeatherError, WeatherSeries};

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{path}: {message}")]
    Input { path: String, message: String },
    #[error(transparent)]
    Weather(#[from] WeatherError),
    #[error(transparent)]
    Simulation(#[from] SimulationError),
    #[error(transparent)]
    Ddpg(#[from] DdpgError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("cannot write {path}: {source}")]
    Output { path: String, source: std::io::Error },
}

impl RunError {
    /// `2` for problems with the invocation or its inputs, `1` otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) | RunError::Input { .. } => 2,
            _ => 1,
        }
    }
}

fn output_error(path: &Path) -> impl FnOnce(std::io::Error) -> RunError + '_ {
    move |source| RunError::Output {
        path: path.display().to_string(),
        source,
    }
}

/// Create `<output_dir>/<name>` and store the resolved configuration and
/// its hash there.
fn prepare_dir(config: &RunConfig, name: &str) -> Result<PathBuf, RunError> {
    let dir = config.resolved_output_dir().join(name);
    std::fs::create_dir_all(&dir).map_err(output_error(&dir))?;
    let path = dir.join(RESOLVED_CONFIG_FILE);
    let text = format!("# config hash {}\n{}", config.hash(), config.to_toml());
    std::fs::write(&path, text).map_err(output_error(&path))?;
    Ok(dir)
}

/// Scenario weather covering `days` days at the controller sample period.
pub fn scenario_weather(config: &RunConfig, days: usize) -> Result<WeatherSeries, RunError> {
    let w = &config.weather;
    let raw = match w.source {
        WeatherSource::Synthetic => synthesize(days, w.seed, &w.profile)?,
        WeatherSource::Csv => load_weather_file(config)?,
    };
    let series = resample(&raw, w.sample_period)?;
    let needed = days * config.steps_per_day();
    if series.len() < needed {
        return Err(RunError::Input {
            path: w.path.as_ref().map(|p| p.display().to_string()).unwrap_or_else(|| "weather".into()),
            message: format!("{} records after resampling, {needed} needed for {days} days", series.len()),
        });
    }
    Ok(series)
}

fn load_weather_file(config: &RunConfig) -> Result<WeatherSeries, RunError> {
    let path = config.weather.path.as_ref().ok_or_else(|| {
        RunError::Config(ConfigError::Invalid("weather.path is required for the csv source".into()))
    })?;
    load_csv(path, &config.weather.columns).map_err(|e| RunError::Input {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

/// Training weather: the synthetic pool, or the whole file for the csv
/// source.
pub fn training_factory(config: &RunConfig) -> Result<EpisodeFactory, RunError> {
    let pool = match config.weather.source {
        WeatherSource::Synthetic => {
            synthesize(config.ddpg.pool_days, config.ddpg.pool_seed, &config.weather.profile)?
        }
        WeatherSource::Csv => load_weather_file(config)?,
    };
    let pool = resample(&pool, config.weather.sample_period)?;
    let mut factory = EpisodeFactory::new(config.model.clone(), pool);
    factory.schedule = config.ddpg.schedule.clone();
    factory.reward = config.ddpg.reward.clone();
    Ok(factory)
}

/// Fixed-input rollout. Writes `simulate/trajectory.csv`.
pub fn cmd_simulate(config: &RunConfig) -> Result<PathBuf, RunError> {
    let weather = scenario_weather(config, config.simulate.days)?;
    let steps = config.simulate.days * config.steps_per_day();
    let mut controller = ConstantController(ControlInput(config.simulate.input));
    let traj = simulate(&config.model, crate::GreenhouseState::INITIAL, &mut controller, &weather, steps)?;
    let dir = prepare_dir(config, "simulate")?;
    let path = dir.join("trajectory.csv");
    save_trajectory(&traj, &path)?;
    Ok(path)
}

fn save_trajectory(traj: &Trajectory, path: &Path) -> Result<(), RunError> {
    traj.save_csv(path).map_err(|e| match e {
        TrajectoryIoError::Io(source) => RunError::Output {
            path: path.display().to_string(),
            source,
        },
        other => RunError::Output {
            path: path.display().to_string(),
            source: std::io::Error::other(other.to_string()),
        },
    })
}

/// Files written by [`cmd_train`].
#[derive(Debug, Clone)]
pub struct TrainOutputs {
    pub checkpoint: PathBuf,
    pub curve: PathBuf,
    pub epochs_done: usize,
}

/// Train (or resume) the agent. Writes `train/agent.json` and
/// `train/learning_curve.csv`. On resume the configured epoch count is the
/// new total.
pub fn cmd_train(config: &RunConfig, resume: Option<&Path>) -> Result<TrainOutputs, RunError> {
    let factory = training_factory(config)?;
    let mut trainer = match resume {
        Some(path) => {
            let mut cp = Checkpoint::load(path).map_err(|e| RunError::Input {
                path: path.display().to_string(),
                message: e.to_string(),
            })?;
            cp.config.epochs = config.ddpg.train.epochs;
            Trainer::resume(factory, cp)?
        }
        None => Trainer::new(factory, config.ddpg.train.clone(), config.seed)?,
    };
    let dir = prepare_dir(config, "train")?;
    trainer.run()?;
    let checkpoint = dir.join("agent.json");
    trainer.checkpoint().save(&checkpoint)?;
    let curve = dir.join("learning_curve.csv");
    let file = std::fs::File::create(&curve).map_err(output_error(&curve))?;
    trainer
        .write_curve(std::io::BufWriter::new(file))
        .map_err(|e| RunError::Output {
            path: curve.display().to_string(),
            source: std::io::Error::other(e),
        })?;
    Ok(TrainOutputs {
        checkpoint,
        curve,
        epochs_done: trainer.epochs_done(),
    })
}

/// Agent for `compare`: loaded from `ddpg.checkpoint`, or trained with the
/// configured settings and seed.
fn comparison_agent(config: &RunConfig) -> Result<AgentBundle, RunError> {
    match &config.ddpg.checkpoint {
        Some(path) => Ok(Checkpoint::load(path)
            .map_err(|e| RunError::Input {
                path: path.display().to_string(),
                message: e.to_string(),
            })?
            .bundle),
        None => {
            log::info!("no checkpoint configured; training for {} epochs", config.ddpg.train.epochs);
            let factory = training_factory(config)?;
            let mut trainer = Trainer::new(factory, config.ddpg.train.clone(), config.seed)?;
            trainer.run()?;
            Ok(trainer.bundle())
        }
    }
}

/// Report file written by [`cmd_compare`]: the comparison plus the hash of
/// the configuration it came from.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CompareOutput {
    pub config_hash: String,
    pub days: usize,
    #[serde(flatten)]
    pub report: ComparisonReport,
}

/// MPC vs trained agent vs zero input. Writes `compare/report.json`, the
/// trajectories, the MPC solve log and (optionally) SVG plots.
pub fn cmd_compare(config: &RunConfig) -> Result<(PathBuf, CompareOutput), RunError> {
    let days = config.eval.scenario_days();
    let weather = scenario_weather(config, days)?;
    let bundle = comparison_agent(config)?;
    let scenario = Scenario {
        model: config.model.clone(),
        x0: crate::GreenhouseState::INITIAL,
        weather,
        steps: days * config.steps_per_day(),
    };
    let cmp = run_comparison(&scenario, &config.mpc, Some(&bundle), &config.eval.epi)?;
    let dir = prepare_dir(config, "compare")?;
    cmp.write(&dir)?;
    let output = CompareOutput {
        config_hash: config.hash(),
        days,
        report: cmp.report.clone(),
    };
    let path = dir.join("report.json");
    let text = serde_json::to_string_pretty(&output).map_err(EvalError::from)? + "\n";
    std::fs::write(&path, text).map_err(output_error(&path))?;
    if config.eval.plots {
        emit_plots(&cmp, &dir.join("plots"))?;
    }
    Ok((path, output))
}

/// Economic profit of a stored trajectory over its whole span.
pub fn cmd_epi(path: &Path, params: &EpiParams) -> Result<f64, RunError> {
    let file = std::fs::File::open(path).map_err(|e| RunError::Input {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    let traj = Trajectory::read_csv(file).map_err(|e| RunError::Input {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    Ok(epi_total(&traj, params)?)
}
