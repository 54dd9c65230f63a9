//! Trial runner, convergence detection, aggregation and export.

pub mod aggregate;
pub mod config;
pub mod export;
pub mod trial;

pub use aggregate::{
    mean_std, optimistic_study, run_experiment, sweep_actions, sweep_pair, AggregateResult,
    OptimisticRow, SweepResult, SweepRow,
};
pub use config::{Algorithm, ExperimentConfig};
pub use trial::{
    detect_policy_convergence, detect_t_convergence, preference_precedes_convergence, run_trial,
    run_trial_with, skill_preference_onset, LearnerView, TrialAgent, TrialResult,
    PREFERENCE_WINDOW,
};
