//! File formats, run configuration, parallel Monte Carlo and the command-line
//! front end for the `willresp-core` estimators.

pub mod cli;
pub mod config;
pub mod io;
pub mod montecarlo;
