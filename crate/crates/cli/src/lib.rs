//! Configuration, run manifests and subcommands of the `costate` tool.

pub mod commands;
pub mod config;
pub mod error;
pub mod manifest;
pub mod pipeline;
