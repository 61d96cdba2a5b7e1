//! File formats, configuration and the command-line front end for
//! `vilavt-core`.
//!
//! Images are netpbm, weights and feature dumps use a small named-tensor
//! container, configuration is sectioned TOML, and metrics, traces and
//! corpora are JSON lines.

pub mod cli;
pub mod commands;
pub mod config;
pub mod corpus;
mod error;
pub mod netpbm;
pub mod weights;

pub use config::RunConfig;
pub use error::Error;
