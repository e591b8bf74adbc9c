//! Deterministic simulated mobile environment: scenario screen graphs,
//! action semantics, the gold consistency judge and dilemma injection.

mod device;
mod judge;
mod plan;
mod scenario;
mod user;

pub use device::{complete_takeover, execute_action, observe, Device, DeviceState, ExecReport, SimDevice};
pub use judge::{gold_judge, normalize_text, parse_amount, parse_iso_date, satisfies, Cmp};
pub use plan::{expected_action, expected_on, slot_value_for_attr, Expected};
pub use scenario::{
    inject_dilemma, load_scenario, DilemmaSpec, Edge, ElementSpec, GoldSlot, InstructionPart, Milestone, PlanOp,
    Scenario, Screen, Stage,
};
pub use user::SimUser;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SimError {
    #[error("invalid scenario at {path}: {reason}")]
    ScenarioInvalid { path: String, reason: String },
    #[error("dilemma cannot be armed: {0}")]
    SpecConflict(String),
    #[error("TYPE without a focused input field")]
    NoFocusedField,
    #[error("point ({x}, {y}) lies outside the screen")]
    OutOfBounds { x: i32, y: i32 },
    #[error("CLICK needs a resolved screen point")]
    MissingPoint,
    #[error("io: {0}")]
    Io(String),
}
