//! The skater's dilemma: the lead-or-draft chicken game, its mixed
//! equilibrium and adjustment dynamics, and an agent-based race simulator
//! that turns the same trade-off into race logs.

mod config;
mod experiment;
mod game;
mod sim;

use thiserror::Error;

pub use config::{LeadPropensity, SimConfig, CONFIG_KEYS, REFERENCE_SPEED};
pub use experiment::{
    fit_models, run_experiment, simulate_series, ExcludedRace, ExperimentConfig, ExperimentResult, FitOutcome,
    ModelFit, RaceRecord, Scenario, Series, SimulatedRace,
};
pub use game::{best_response_dynamics, expected_payoffs, nash_cooperation_fraction, GameClass, PayoffMatrix};
pub use sim::{
    draw_agents, race_log_from_run, simulate_agents, simulate_race, AgentSpec, AgentState, Diagnostics,
    Role, SimOutcome, SimRun, SkaterTruth,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DilemmaError {
    #[error("{0}")]
    Ordering(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("simulation fault: {0}")]
    SimulationFault(String),
    #[error(transparent)]
    Metrics(#[from] crate::metrics::MetricsError),
}
