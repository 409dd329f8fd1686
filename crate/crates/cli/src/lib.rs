// SPDX-License-Identifier: Apache-2.0

//! Config loading, result bundles and the `singlet` subcommands.

pub mod commands;
pub mod config;
pub mod error;
pub mod output;

use std::path::{Path, PathBuf};

pub use commands::{simulate, spectrum, steady_state_report, sweep, Run};
pub use config::RunConfig;
pub use error::CliError;

/// Loads `config`, applies command-line overrides and resolves the output directory.
pub fn load_run(
    config: &Path,
    out: Option<PathBuf>,
    seed: Option<u64>,
    threads: Option<usize>,
) -> Result<Run, CliError> {
    let mut cfg = RunConfig::load(config)?;
    if let Some(s) = seed {
        cfg.ensemble.seed = s;
    }
    if let Some(t) = threads {
        cfg.ensemble.threads = Some(t);
    }
    cfg.validate()?;
    let out = output::resolve_out_dir(out, cfg.output.dir.as_ref());
    Ok(Run { config: cfg, out })
}
