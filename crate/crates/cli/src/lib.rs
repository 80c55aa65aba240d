//! Pipeline orchestration for the `wscl` command.

pub mod ablate;
pub mod artifacts;
pub mod cli;
pub mod commands;
pub mod config;
pub mod error;
pub mod pipeline;
