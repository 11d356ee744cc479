//! File formats, embedding cache, checkpoints and the `gemm-gan` command line
//! around the algorithms in `gemm-core`.

pub mod checkpoint;
pub mod cli;
pub mod commands;
pub mod config;
pub mod error;
pub mod formats;
pub mod plots;
pub mod store;
pub mod workdir;

pub use error::{AppError, Result};
