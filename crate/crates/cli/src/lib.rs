//! Command-line driver for simulation, estimation, rank selection and Monte
//! Carlo studies of matrix error correction models.
//!
//! Panels are wide CSV files (a time column plus one column per matrix cell)
//! described by a JSON [`layout::PanelLayout`]. Every JSON output records the
//! invocation and seed that produced it.

pub mod commands;
pub mod error;
pub mod layout;
pub mod report;

pub use commands::{cmd_fit, cmd_montecarlo, cmd_select, cmd_simulate, run, Cli, Command};
pub use error::{CliError, Result};
pub use layout::{load_csv, write_csv, Panel, PanelLayout};
