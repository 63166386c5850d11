use std::io;
use std::path::PathBuf;

use hierion_core::retrospect::RetrospectError;
use hierion_core::scenario::{PartialError, ScenarioError};
use hierion_core::store::{BundleError, StoreError};
use thiserror::Error;

pub const EXIT_VALIDATION: u8 = 1;
pub const EXIT_IO: u8 = 2;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Bundle(#[from] BundleError),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Retrospect(#[from] RetrospectError),
    #[error(transparent)]
    Partial(#[from] PartialError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("{0}")]
    Invalid(String),
    #[error("missing report {}", .0.display())]
    MissingReport(PathBuf),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>) -> impl FnOnce(io::Error) -> Self {
        let path = path.into();
        move |source| Self::Io { path, source }
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            Self::Store(_) | Self::MissingReport(_) | Self::Io { .. } => EXIT_IO,
            _ => EXIT_VALIDATION,
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
