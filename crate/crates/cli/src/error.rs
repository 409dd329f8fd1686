// SPDX-License-Identifier: Apache-2.0

use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),

    #[error("{0}")]
    Numerical(#[source] singlet_core::Error),

    #[error("self-check failed: {0}")]
    SelfCheck(String),

    #[error("{}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    /// Process exit status.
    pub fn code(&self) -> i32 {
        match self {
            CliError::Io { .. } => 1,
            CliError::Config(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::SelfCheck(_) => 4,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }
}

impl From<singlet_core::Error> for CliError {
    fn from(e: singlet_core::Error) -> Self {
        use singlet_core::Error as E;
        match e {
            E::InvalidParameter { .. } | E::CriterionMismatch { .. } | E::TargetUnreachable { .. } | E::Empty(_) => {
                CliError::Config(e.to_string())
            }
            other => CliError::Numerical(other),
        }
    }
}
