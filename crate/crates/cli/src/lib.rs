//! Command-line driver for `kp-core`: configuration files, the six
//! commands, report files and the acceptance pipeline.

pub mod acceptance;
pub mod commands;
pub mod config;
pub mod error;
pub mod report;
