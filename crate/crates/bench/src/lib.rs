// SPDX-License-Identifier: Apache-2.0

//! Shared fixtures for the benchmarks.

use std::f64::consts::FRAC_PI_2;

use singlet_core::sme::{default_dt, DensityMatrix, IntegratorConfig};
use singlet_core::spin::{basis_ket, EG};
use singlet_core::{build_effective_model, run_trajectory, EffectiveModel, SystemParams};

/// DC-protocol model: `χ = 16.5`, `Δq = 10`, `θ = −π/2`.
pub fn dc_model() -> EffectiveModel {
    build_effective_model(&SystemParams::bad_cavity(16.5, 10.0, -FRAC_PI_2)).expect("valid preset")
}

/// AC-protocol model: `χ = 10`, `Δq = 0`, `θ = 0`.
pub fn ac_model() -> EffectiveModel {
    build_effective_model(&SystemParams::bad_cavity(10.0, 0.0, 0.0)).expect("valid preset")
}

pub fn eg() -> DensityMatrix {
    DensityMatrix::from_ket(&basis_ket(EG))
}

/// Centered photocurrent of one `γpT = 10` record.
pub fn record(model: &EffectiveModel) -> (Vec<f64>, f64) {
    let cfg = IntegratorConfig::with_dt(1.0 / (1.0 / default_dt(model)).ceil(), 10.0, 1);
    let rec = run_trajectory(model, &cfg, &eg(), 0).expect("trajectory");
    (rec.centered_current().collect(), rec.dt)
}
