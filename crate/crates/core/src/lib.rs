//! Greenhouse climate simulation and control benchmark.
//!
//! The crate bundles the lettuce greenhouse model, weather handling, a
//! receding-horizon nonlinear MPC, a DDPG agent trained against the same
//! model, and the evaluation code that compares the two on shared scenarios.

pub mod config;
pub mod ddpg;
pub mod eval;
pub mod model;
pub mod mpc;
pub mod run;
pub mod simulate;
pub mod weather;

pub use model::{ControlInput, GreenhouseModel, GreenhouseState, Measurement, ModelError, ModelParams, WeatherRecord};
pub use simulate::{simulate, ControlContext, Controller, Trajectory};
pub use weather::WeatherSeries;
