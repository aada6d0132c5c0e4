//! Command line, file formats and a rayon document runner for `ldta-core`.
// `!(x > 0.0)` rejects NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod error;
pub mod formats;
pub mod model_file;
pub mod runner;

pub use error::{exit, CliError, CliResult};
