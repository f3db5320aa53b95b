//! Config-driven experiments, verification suites and reports for kacflow.

pub mod config;
pub mod expr;
pub mod report;
pub mod run;
pub mod verify;
