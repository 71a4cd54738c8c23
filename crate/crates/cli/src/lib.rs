//! Command-line front end of `cr-afem`: run configuration, file formats and
//! the `run`, `rates`, `axioms` and `equivalence` subcommands.

pub mod commands;
pub mod config;
pub mod formats;
