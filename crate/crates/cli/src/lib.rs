//! Experiment harness for the `aecomm` simulator: configuration files,
//! model and dataset persistence, BER sweeps, SNR-JSR frontiers and the
//! `aecomm` command line.

pub mod commands;
pub mod config;
pub mod csv;
pub mod dataset;
pub mod experiments;
pub mod modelfile;

pub use commands::run;
