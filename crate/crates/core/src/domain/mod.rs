//! Shared domain types and the pure slot and window algebra.
//!
//! Everything here is an immutable value; operations return new values and
//! never mutate their inputs.

mod action;
mod observation;
mod slot;
mod task;
mod trajectory;

pub use action::{split_help, Action, ActionKind, Direction};
pub use observation::{
    Bounds, DilemmaMarker, ElementRole, ElementState, GroundTruth, Observation, UiElement, SCREEN_HEIGHT, SCREEN_WIDTH,
};
pub use slot::{make_slot_set, normalize_key, Inconsistency, InconsistencySet, Slot, SlotOrigin, SlotSet};
pub use task::{Instruction, Intent, IntentSpace, Subtask, SubtaskList, DEFAULT_USER_MARKER};
pub use trajectory::{
    render_trajectory, trajectory_window, HistorySummary, TaskContext, TrajectoryStep, DEFAULT_SUMMARY_MAX,
    DEFAULT_WINDOW,
};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DomainError {
    #[error("slot key must not be empty")]
    EmptyKey,
    #[error("duplicate slot key `{0}`")]
    DuplicateKey(String),
    #[error("slot key `{0}` already exists")]
    KeyCollision(String),
    #[error("no replacement value for slot `{0}`")]
    MissingReplacement(String),
    #[error("unknown slot key `{0}`")]
    UnknownKey(String),
    #[error("slot `{0}` has no value and no inquiry")]
    MissingInquiry(String),
    #[error("slot `{0}` has a value but also an inquiry")]
    InquiryOnFilledSlot(String),
    #[error("invalid action `{0}`")]
    InvalidAction(String),
    #[error("invalid observation: {0}")]
    InvalidObservation(String),
    #[error("clarified instruction does not mention {0:?}")]
    ClarificationIncomplete(Vec<String>),
    #[error("summary has {len} characters, limit is {max}")]
    SummaryTooLong { len: usize, max: usize },
}
