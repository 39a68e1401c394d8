//! End-to-end continual runs, baselines, alpha sweeps and reports.
//!
//! A stream starts from a model trained on general templates, then learns
//! tasks one stage at a time. After each stage the run evaluates every task
//! seen so far plus a general probe built from held-out template examples,
//! and measures how far the model's final hidden states on the probe have
//! drifted from the starting model.

mod config;
pub mod report;
mod run;
mod sweep;

pub use config::{derive_seed, Consolidation, InitMode, Method, OptimConfig, Regularizer, RunConfig, StreamConfig};
pub use run::{
    continual_run, continual_run_from, evaluate, exact_match, forgetting, joint_run, joint_run_from, language_shift,
    lr_at, prepare_initial, RunRecord, StageRecord, StageSnapshot, StreamData, TaskEval,
};
pub use sweep::{alpha_sweep, boundaries, Boundaries, SweepPoint, SweepResult, DEFAULT_BOUNDARY_TOL, SWEEP_METHODS};
