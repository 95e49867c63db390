//! Command implementations behind the `outbreak` binary.

pub mod commands;
pub mod server;
