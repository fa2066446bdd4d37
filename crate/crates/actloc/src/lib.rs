//! File formats, synthetic benchmarks, experiment pipeline and command line
//! front end for `actloc-core`.

pub mod cli;
pub mod dataio;
pub mod error;
pub mod pipeline;
pub mod synth;

pub use cli::run_command;
pub use error::{Error, Result};
