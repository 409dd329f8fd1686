// SPDX-License-Identifier: Apache-2.0

//! Probabilistic preparation of a two-qubit singlet by continuous homodyne
//! detection of a driven bad cavity.
//!
//! The crate integrates the conditioned (stochastic) master equation of the
//! effective qubit model, turns the simulated photocurrent into acceptance
//! signals, and provides closed-form steady-state and spectral results to
//! check the simulations against.

pub mod analytics;
pub mod error;
pub mod harness;
pub mod kraus;
pub mod linalg;
pub mod model;
pub mod noise;
pub mod signals;
pub mod sme;
pub mod spin;

pub use analytics::{
    analytic_spectrum, build_moment_system, mean_sx_closed_form, peak_characterize, single_qubit_system, steady_state,
    AnalyticParams, MomentSystem, MomentVector, PeakReport, SpectrumModel,
};
pub use error::{Error, Result, StepDiagnostics};
pub use harness::{
    deterministic_ode_check, fidelity_vs_success_curve, run_ensemble, sweep_decoherence, threshold_for_success,
    EnsembleConfig, EnsembleSummary, InitialState, Rule,
};
pub use linalg::{ComplexMatrix, Operator};
pub use model::{build_effective_model, derive_params, DerivedParams, EffectiveModel, SystemParams};
pub use noise::{wiener_increments, NoiseKey};
pub use signals::{
    accept, periodogram, zeta_lockin, zeta_mean_current, zeta_mean_current_weighted, Criterion, LockinConfig,
    SignalResult, SpectrumKind, SpectrumTable,
};
pub use sme::{run_trajectory, DensityMatrix, IntegratorConfig, TrajectoryRecord};
pub use spin::{build_operator_catalog, to_singlet_triplet_basis, OperatorCatalog};
