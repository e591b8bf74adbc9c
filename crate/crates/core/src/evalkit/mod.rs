//! Metrics over run traces, plus the battery, window sweep and ablation
//! runners.

mod score;
mod suite;

pub use score::{score_run, Metric, Ratio, Score};
pub use suite::{ablation_variants, battery_names, RunRow, Suite, SweepReport, Table, DILEMMA_VARIANTS, FAMILIES};

use thiserror::Error;

use crate::orchestrator::OrchestratorError;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("cannot score trace: {0}")]
    Trace(String),
    #[error(transparent)]
    Run(#[from] OrchestratorError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}
