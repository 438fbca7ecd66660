//! Command-line front end: plan files, sweeps, table reproduction and trial conduct.

pub mod app;
pub mod planfile;
pub mod sweep;
pub mod tables;

pub use app::{run, EXIT_INCONCLUSIVE, EXIT_OK, EXIT_USAGE, EXIT_VIOLATED};
