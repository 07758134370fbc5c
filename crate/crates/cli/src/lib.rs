//! Experiment driver behind the `trajsim` binary.

pub mod commands;
pub mod config;
