// SPDX-License-Identifier: Apache-2.0

use thiserror::Error;

/// Diagnostics attached to an aborted trajectory step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepDiagnostics {
    pub step: usize,
    pub time: f64,
    pub trace: f64,
    pub min_eigenvalue: Option<f64>,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected:?}, found {found:?}")]
    DimensionMismatch {
        expected: (usize, usize),
        found: (usize, usize),
    },

    #[error("matrix is not Hermitian (max deviation {deviation:.3e})")]
    NotHermitian { deviation: f64 },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("singular linear system (condition estimate {condition:.3e})")]
    SingularSystem { condition: f64 },

    #[error("trace drifted by {deviation:.3e} at step {} (t = {:.6})", .diagnostics.step, .diagnostics.time)]
    TraceDrift {
        deviation: f64,
        diagnostics: StepDiagnostics,
    },

    #[error("density matrix lost positivity at step {} (min eigenvalue {:.3e}); reduce dt", .diagnostics.step, .diagnostics.min_eigenvalue.unwrap_or(f64::NAN))]
    PositivityViolation { diagnostics: StepDiagnostics },

    #[error("trajectory {trajectory} (master seed {master_seed}) aborted: {source}")]
    TrajectoryAborted {
        master_seed: u64,
        trajectory: u64,
        #[source]
        source: Box<Error>,
    },

    #[error("criterion `{criterion}` cannot be applied: {reason}")]
    CriterionMismatch { criterion: &'static str, reason: String },

    #[error("target success probability {target} is unreachable")]
    TargetUnreachable { target: f64 },

    #[error("no spectral peak above the floor")]
    NoPeak,

    #[error("empty input: {0}")]
    Empty(&'static str),
}

pub type Result<T> = std::result::Result<T, Error>;
