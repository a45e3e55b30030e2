//! Scenario configuration, the simulated world and the drivers built on it.

pub mod baseline;
pub mod config;
pub mod fairness;
pub mod run;
pub mod world;

pub use config::{load_config, ConfigError, ScenarioConfig};
pub use world::{World, TraceRecord};
pub use run::{enumerate, run_scenario, run_unchecked, sweep, Atomicity, RunMetrics, RunOutput};
