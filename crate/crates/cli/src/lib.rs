//! Command-line pipeline over synthetic CT phantoms: generate, split,
//! preprocess, augment, train, predict and evaluate.

pub mod commands;
pub mod config;
pub mod error;
pub mod io;
pub mod phantom;
pub mod plot;

pub use error::{CliError, Result};
