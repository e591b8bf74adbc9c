//! Slot-driven human-in-the-loop agents for mobile tasks.

pub mod dma;
pub mod domain;
pub mod evalkit;
pub mod gateway;
pub mod ima;
pub mod memory;
pub mod orchestrator;
pub mod pilot;
pub mod ra;
pub mod simenv;

pub use domain::*;
