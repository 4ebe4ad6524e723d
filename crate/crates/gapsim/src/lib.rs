//! Command-line front end for `gapsim-core`: experiment configs, trace
//! files, CSV reports and parallel plan sweeps.

pub mod cli;
pub mod config;
pub mod parallel;
pub mod report;
pub mod trace_io;
