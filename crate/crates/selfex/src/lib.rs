//! File formats, configuration, a thread-pool executor and the command
//! implementations behind the `selfex` binary.

pub mod commands;
pub mod config;
pub mod exec;
pub mod formats;
