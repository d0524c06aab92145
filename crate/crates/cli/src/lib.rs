//! Experiment harness for the relfair library: configuration, runners,
//! artifact writers, and the subcommand implementations behind the
//! `relfair` binary.

pub mod artifact;
pub mod commands;
pub mod config;
pub mod runner;
