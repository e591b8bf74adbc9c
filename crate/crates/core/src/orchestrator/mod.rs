//! Session runtime: the two-stage workflow, the user channel, loop guards
//! and the append-only trace.

mod channel;
mod config;
mod lint;
mod run;
mod trace;

pub use channel::{ReplyBroker, ReplyError, ScriptedReplies, SimUserChannel, UserChannel};
pub use config::{Assets, BackendRef, LocatorKind, RunConfig, SessionConfig};
pub use lint::{lint, LintRule, Violation};
pub use run::{replay, replies_of, run_scenario, Session};
pub use trace::{EndStatus, EventKind, RunTrace, SessionLog, TraceEvent, Tracer};

use thiserror::Error;

use crate::dma::DmaError;
use crate::domain::DomainError;
use crate::gateway::GatewayError;
use crate::ima::ImaError;
use crate::memory::MemoryError;
use crate::ra::RaError;
use crate::simenv::SimError;

#[derive(Debug, Error)]
pub enum OrchestratorError {
    #[error(transparent)]
    Ima(#[from] ImaError),
    #[error(transparent)]
    Dma(#[from] DmaError),
    #[error(transparent)]
    Ra(#[from] RaError),
    #[error(transparent)]
    Memory(#[from] MemoryError),
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("malformed trace: {0}")]
    BadTrace(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl OrchestratorError {
    /// Errors that end the session without an iteration retry.
    pub fn is_fatal(&self) -> bool {
        matches!(
            self,
            OrchestratorError::Ima(ImaError::UserDeclined(_) | ImaError::Channel(_)) | OrchestratorError::Config(_)
        )
    }

    pub fn is_declined(&self) -> bool {
        matches!(self, OrchestratorError::Ima(ImaError::UserDeclined(_)))
    }
}
