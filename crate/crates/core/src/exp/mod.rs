//! Experiment orchestration: configs, runs, sweeps and comparisons.

pub mod compare;
pub mod config;
pub mod metrics;
pub mod runner;

pub use compare::{compare_runs, load_groups, mean_std, rounds_csv, summary_csv, GroupStats, GroupSummary, RoundStats};
pub use config::ExperimentConfig;
pub use metrics::{format_value, header, metrics_csv, read_metrics, write_metrics, MetricsRow};
pub use runner::{
    agent_phase_seed, run_experiment, simulate, simulate_into, sweep, train_scheduler, AgentSummary, Manifest,
    RunArtifacts, RunSummary, Simulation, VflEnv, ACTOR_FILE, FAILURE_FILE, MANIFEST_FILE, METRICS_FILE, SUMMARY_FILE,
};
