//! Scenario configuration, traffic, metrics, aggregation and the studies
//! driven by the command line tool.

pub mod config;
pub mod metrics;
pub mod output;
pub mod run;
pub mod stats;
pub mod study;

use thiserror::Error;

pub use config::{ConfigError, ScenarioConfig, TrafficConfig};
pub use metrics::{compute_pdr, count_overhead, RunMetrics};
pub use run::{build_network, run_once, run_scenario, run_seeds};
pub use stats::{mean_ci, paired_diff_ci, Summary};
pub use study::{pipe_width_study, WidthRow};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("simulation invariant violated: {0}")]
    Sim(#[from] crate::sim::SimError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Stats(#[from] stats::StatsError),
}
