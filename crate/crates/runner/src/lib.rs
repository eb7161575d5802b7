//! Orchestrates masked gender task experiments: prompt expansion,
//! fill-mask evaluation, statistics, causal simulation and artifact output.

pub mod cache;
pub mod experiment;
pub mod service;

pub use experiment::{
    emit_plot_data, run_experiment, run_mgt_experiment, run_sim, run_winogender_experiment, Basis, DateRange,
    ExperimentConfig, ExperimentKind, ExperimentReport, RunContext, RunError,
};
