//! Command-line front end for the `eids` toolkit.
//!
//! Each subcommand is a plain function in [`commands`] so that tests can
//! drive the pipeline without spawning processes; `main.rs` only parses
//! flags, applies them over the [`config::RunConfig`] and maps errors to
//! exit codes.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 input error
//! (missing or malformed files, labels), 3 numeric failure (non-finite
//! activations), 4 empty dataset.

pub mod commands;
pub mod config;
pub mod manifest;

use std::io;
use std::path::{Path, PathBuf};

use eids::augment::AugmentError;
use eids::evalkit::EvalError;
use eids::flowcap::FlowcapError;
use eids::synthgen::SynthError;
use eids::tinyformer::ModelError;
use thiserror::Error;

pub use config::RunConfig;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("config: {0}")]
    Config(String),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error("{}: {source}", path.display())]
    Capture { path: PathBuf, source: FlowcapError },
    #[error("{0}")]
    Input(String),
    #[error("empty dataset: {0}")]
    EmptyDataset(String),
    #[error(transparent)]
    Flowcap(#[from] FlowcapError),
    #[error(transparent)]
    Augment(#[from] AugmentError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Synth(#[from] SynthError),
}

fn model_code(e: &ModelError) -> i32 {
    match e {
        ModelError::InvalidConfig(_) => 1,
        ModelError::NonFiniteActivation(_) => 3,
        ModelError::EmptyDataset => 4,
        _ => 2,
    }
}

impl CliError {
    pub fn io(path: &Path, source: io::Error) -> Self {
        Self::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Config(_) => 1,
            CliError::EmptyDataset(_) => 4,
            CliError::Augment(AugmentError::InvalidConfig(_)) => 1,
            CliError::Model(e) => model_code(e),
            CliError::Eval(EvalError::Model(e)) => model_code(e),
            CliError::Eval(EvalError::EmptyDataset) => 4,
            CliError::Eval(EvalError::InvalidThreshold(_)) => 1,
            CliError::Synth(SynthError::InvalidSpec(_)) => 1,
            _ => 2,
        }
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;
