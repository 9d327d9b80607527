//! Simulation harness: workloads, query driver, exports and the CLI.

pub mod audit;
pub mod cli;
pub mod compare;
pub mod concurrent;
pub mod config;
pub mod events_csv;
pub mod export;
pub mod manifest;
pub mod scenario;
pub mod workload;
