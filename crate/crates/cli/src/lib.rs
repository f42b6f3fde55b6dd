//! Library side of the `scalesep` binary, shared with its tests.

pub mod commands;
pub mod config;
pub mod exit;
mod plot;
