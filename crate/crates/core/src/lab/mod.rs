//! Training harness, trajectory analysis and the verification suites.

mod checks;
mod config;
mod experiment;
mod gradcheck;
mod train;
mod trajectory;

pub use checks::{
    random_expr, sl_ds_equivalence_check, wmc_oracle_check, wta_step_check, CheckReport, WtaStep,
    WtaTrial, WTA_LR, WTA_TIE,
};
pub use config::{RunConfig, CONFIG_KEYS};
pub use experiment::{
    analyze, regenerate_report, render_report, run_dataset, run_experiment, run_seeds,
    write_experiment, Analysis, DataSource, RunResult, AGGREGATE_FILE, CHECKPOINT_DIR,
    CONFIG_FILE, RANKED_AGGREGATE_FILE, REPORT_FILE, RUNS_FILE, TRAJECTORY_FILE,
};
pub use gradcheck::{gradient_check, primitive_names, GRAD_TOL};
pub use train::{init_model, train_run, DigitAccuracy, RunOutput};
pub use trajectory::{
    aggregate_runs, aggregate_to_csv, detect_deterministic_bias, rank_ds_outputs,
    trajectories_from_csv, trajectories_to_csv, AggregateRecord, AggregateTrajectory, BiasReport,
    Collapse, PartitionProbs, Trajectory, TrajectoryRecord, DEFAULT_BIAS_TOL,
    DEFAULT_TAIL_FRACTION, N_PARTITIONS, N_WORLDS, WORLD_NAMES,
};

use crate::autodiff::AutodiffError;
use crate::data::DataError;
use crate::models::{LossKind, ModelError};

#[derive(Debug, thiserror::Error)]
pub enum LabError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("run {run}: loss became {value} after {step} updates")]
    NonFiniteLoss { run: usize, step: u64, value: f64 },
    #[error("config: {0}")]
    Config(String),
    #[error("no runs to aggregate")]
    NoRuns,
    #[error("trajectories do not line up: {0}")]
    MismatchedTrajectories(String),
    #[error("output ranking needs a disjunctive run, got {0}")]
    WrongLossKind(LossKind),
    #[error("csv: {0}")]
    Csv(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}
