//! Command line front end and session service.

pub mod console;
pub mod server;
