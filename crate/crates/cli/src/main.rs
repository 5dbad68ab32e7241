use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use greenhouse_core::config::RunConfig;
use greenhouse_core::run::{cmd_compare, cmd_epi, cmd_simulate, cmd_train, RunError};

/// Greenhouse climate control experiments: fixed-input simulation, DDPG
/// training, and MPC vs. RL comparison.
#[derive(Debug, Parser)]
#[command(name = "greenhouse", version)]
struct Cli {
    /// TOML configuration file. Defaults are used for missing keys.
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,

    /// Override a configuration value, e.g. `--set mpc.horizon=12`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Roll the model forward under a constant input.
    Simulate {
        #[arg(long)]
        days: Option<usize>,
    },
    /// Train the DDPG agent and write a checkpoint and learning curve.
    Train {
        #[arg(long)]
        epochs: Option<usize>,
        /// Continue from a checkpoint; `--epochs` is the new total.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Compare MPC, the trained agent and zero input on one scenario.
    Compare {
        /// Run the whole growing cycle instead of the short scenario.
        #[arg(long)]
        full_cycle: bool,
        /// Agent checkpoint; trained from the configuration when omitted.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Economic profit of a trajectory CSV.
    Epi { trajectory: PathBuf },
    /// Print the resolved configuration.
    Config,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cli: Cli) -> Result<(), RunError> {
    let mut overrides = cli.overrides;
    match &cli.command {
        Command::Simulate { days: Some(d) } => overrides.push(format!("simulate.days={d}")),
        Command::Train { epochs: Some(n), .. } => overrides.push(format!("ddpg.train.epochs={n}")),
        Command::Compare { full_cycle, checkpoint } => {
            if *full_cycle {
                overrides.push("eval.full_cycle=true".into());
            }
            if let Some(p) = checkpoint {
                overrides.push(format!("ddpg.checkpoint={}", toml_string(&p.display().to_string())));
            }
        }
        _ => {}
    }
    let config = RunConfig::load(cli.config.as_deref(), &overrides)?;

    match cli.command {
        Command::Simulate { .. } => {
            let path = cmd_simulate(&config)?;
            println!("{}", path.display());
        }
        Command::Train { resume, .. } => {
            let out = cmd_train(&config, resume.as_deref())?;
            println!("{}", out.checkpoint.display());
            println!("{}", out.curve.display());
        }
        Command::Compare { .. } => {
            let (path, out) = cmd_compare(&config)?;
            for c in &out.report.controllers {
                println!(
                    "{:<5} EPI {:.4} Hfl/m2  y1 {:.2} g/m2  T-violations {:.1}%  {:.3} ms/step",
                    c.name,
                    c.epi,
                    c.final_y1,
                    100.0 * c.violations.temperature.fraction,
                    1e3 * c.timing.mean_step_s
                );
            }
            println!("{}", path.display());
        }
        Command::Epi { trajectory } => {
            println!("{}", cmd_epi(&trajectory, &config.eval.epi)?);
        }
        Command::Config => {
            print!("{}", config.to_toml());
        }
    }
    Ok(())
}

/// Quote `s` as a TOML basic string.
fn toml_string(s: &str) -> String {
    toml::Value::String(s.to_string()).to_string()
}
