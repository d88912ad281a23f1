//! Command-line front end for the `twfe` estimation library: long-format
//! panel ingestion, JSON run configuration, and the estimate / test /
//! simulate / diagnose / tau-sweep subcommands with structured outputs.

pub mod commands;
pub mod config;
pub mod csvio;
pub mod error;
pub mod ingest;
pub mod report;
