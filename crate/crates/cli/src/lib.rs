//! Shared pieces of the `symcloud` binary: configuration, result files,
//! plots, and the batch evaluation driver.

pub mod config;
pub mod evalcmd;
pub mod plot;
pub mod report;
