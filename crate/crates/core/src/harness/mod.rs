//! Experiment harness: CLI, run configuration, metrics, and reports.

pub mod cli;
pub mod config;
pub mod metrics;
pub mod recipes;
pub mod report;

pub use cli::{cli_main, MIG_SAMPLES, TRAVERSAL_STEPS};
pub use config::{output_root, RunConfig, DESK_TRAIN_STEPS, FULL_TRAIN_STEPS, OUTPUT_ROOT_ENV};
pub use metrics::{compute_mig, compute_success_rate, MigResult, MIG_BINS};
pub use recipes::{eval_policy, mig_for_policy, probe_state, train_on_demos, MetricsRecord};
pub use report::{collect_report, render_csv, write_report, Report, ReportRow};
