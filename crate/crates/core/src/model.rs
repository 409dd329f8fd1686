// SPDX-License-Identifier: Apache-2.0

//! Effective two-qubit model after adiabatic elimination of the cavity field.
//!
//! Before elimination the cavity mode `a` (decay `κ = κ₁ + κ₂`, detuning `Δc`,
//! drive `β` through mirror 1) couples to the qubits through
//! `H = Δc a†a + i√(2κ₁)(β a† − β* a) + (Δq/2)S_z + g(S₊a + S₋a†)` and the
//! homodyne measurement operator is `d = √(2κ₂) a e^{−iθ}`. Only the eliminated
//! form below is ever time-evolved; it is valid while `κ ≫ g, χ, γ∥, 1/τ`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Operator;
use crate::spin::{build_operator_catalog, OperatorCatalog};

/// Ratio `κ / max(g, |χ|, γ∥, 1/τ)` below which adiabatic elimination is flagged.
pub const ADIABATIC_MARGIN: f64 = 20.0;

/// Physical inputs. Rates share one unit (by convention `γp`, see
/// [`SystemParams::rescaled_to_gamma_p`]); `beta` is in units of `rate^½`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemParams {
    pub kappa1: f64,
    pub kappa2: f64,
    pub delta_c: f64,
    pub delta_q: f64,
    pub g: f64,
    #[serde(default)]
    pub delta_g: f64,
    #[serde(default)]
    pub delta_omega_q: f64,
    pub beta: f64,
    #[serde(default)]
    pub gamma_par: f64,
    #[serde(default = "infinite")]
    pub tau_phase: f64,
    pub eta: f64,
    pub theta: f64,
}

fn infinite() -> f64 {
    f64::INFINITY
}

impl SystemParams {
    /// Bad-cavity setup with `κ = 5000`, `g = 50`, `Δc = 0`, nearly all decay
    /// through the detected mirror, perfect detection and no qubit decay,
    /// driven so that the resonant Rabi frequency equals `chi`. Rescaled so that
    /// `γp = 1` exactly.
    pub fn bad_cavity(chi: f64, delta_q: f64, theta: f64) -> Self {
        let kappa = 5000.0;
        let kappa1 = 1e-6;
        let mut p = SystemParams {
            kappa1,
            kappa2: kappa - kappa1,
            delta_c: 0.0,
            delta_q,
            g: 50.0,
            delta_g: 0.0,
            delta_omega_q: 0.0,
            beta: 0.0,
            gamma_par: 0.0,
            tau_phase: f64::INFINITY,
            eta: 1.0,
            theta,
        };
        p = p.rescaled_to_gamma_p().expect("preset parameters are valid");
        p.beta = p.beta_for_chi(chi);
        p
    }

    pub fn kappa(&self) -> f64 {
        self.kappa1 + self.kappa2
    }

    /// Drive amplitude giving a resonant Rabi frequency of magnitude `chi`.
    pub fn beta_for_chi(&self, chi: f64) -> f64 {
        if self.kappa1 <= 0.0 || self.g <= 0.0 {
            return 0.0;
        }
        let kappa = self.kappa();
        chi * (kappa * kappa + self.delta_c * self.delta_c).sqrt() / (2.0 * self.g * (2.0 * self.kappa1).sqrt())
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [
            ("kappa1", self.kappa1),
            ("kappa2", self.kappa2),
            ("delta_c", self.delta_c),
            ("delta_q", self.delta_q),
            ("g", self.g),
            ("delta_g", self.delta_g),
            ("delta_omega_q", self.delta_omega_q),
            ("beta", self.beta),
            ("gamma_par", self.gamma_par),
            ("eta", self.eta),
            ("theta", self.theta),
        ];
        for (name, value) in finite {
            if !value.is_finite() {
                return Err(invalid(name, format!("must be finite, got {value}")));
            }
        }
        for (name, value) in [
            ("kappa1", self.kappa1),
            ("kappa2", self.kappa2),
            ("g", self.g),
            ("gamma_par", self.gamma_par),
        ] {
            if value < 0.0 {
                return Err(invalid(name, format!("must be non-negative, got {value}")));
            }
        }
        if !(0.0..=1.0).contains(&self.eta) {
            return Err(invalid("eta", format!("must lie in [0, 1], got {}", self.eta)));
        }
        if self.tau_phase.is_nan() || self.tau_phase <= 0.0 {
            return Err(invalid(
                "tau_phase",
                format!("must be positive or infinite, got {}", self.tau_phase),
            ));
        }
        if self.kappa() <= 0.0 {
            return Err(invalid("kappa", "total field decay must be positive".into()));
        }
        Ok(())
    }

    /// Whether `κ ≥ 20·max(g, |χ|, γ∥, 1/τ)`.
    pub fn adiabatic_elimination_valid(&self, derived: &DerivedParams) -> bool {
        let fastest = [self.g.abs(), derived.chi.norm(), self.gamma_par, 1.0 / self.tau_phase]
            .into_iter()
            .fold(0.0, f64::max);
        self.kappa() >= ADIABATIC_MARGIN * fastest
    }

    /// Multiplies every rate by `factor` (and `β` by `√factor`), leaving all
    /// dimensionless quantities unchanged.
    pub fn scaled(&self, factor: f64) -> Self {
        SystemParams {
            kappa1: self.kappa1 * factor,
            kappa2: self.kappa2 * factor,
            delta_c: self.delta_c * factor,
            delta_q: self.delta_q * factor,
            g: self.g * factor,
            delta_g: self.delta_g * factor,
            delta_omega_q: self.delta_omega_q * factor,
            beta: self.beta * factor.sqrt(),
            gamma_par: self.gamma_par * factor,
            tau_phase: self.tau_phase / factor,
            eta: self.eta,
            theta: self.theta,
        }
    }

    /// Same physics expressed in units where `γp = 1`.
    pub fn rescaled_to_gamma_p(&self) -> Result<Self> {
        let gamma_p = derive_params(self)?.gamma_p;
        if gamma_p <= 0.0 {
            return Err(invalid("g", "γp vanishes; no natural unit".into()));
        }
        Ok(self.scaled(1.0 / gamma_p))
    }

    /// Sets the coupling inhomogeneity so that the Rabi frequencies of the two
    /// qubits differ by `delta_chi`.
    pub fn with_rabi_inhomogeneity(mut self, delta_chi: f64) -> Result<Self> {
        let alpha = derive_params(&self)?.alpha_c.norm();
        if alpha == 0.0 {
            return Err(invalid("beta", "no drive; δχ undefined".into()));
        }
        self.delta_g = delta_chi / (2.0 * alpha);
        Ok(self)
    }
}

fn invalid(name: &'static str, reason: String) -> Error {
    Error::InvalidParameter { name, reason }
}

/// Quantities derived from [`SystemParams`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DerivedParams {
    pub kappa: f64,
    /// Mean cavity field without qubits, `√(2κ₁)β/(κ + iΔc)`.
    pub alpha_c: Complex64,
    /// Resonant Rabi frequency `2gα_c`.
    pub chi: Complex64,
    /// Difference in Rabi frequency between the two qubits, `2α_c δg`.
    pub delta_chi: Complex64,
    /// Correlated (Purcell) decay rate `2g²κ/(κ² + Δcq²)`.
    pub gamma_p: f64,
    /// `atan2(−Δcq, κ)`.
    pub theta_kappa: f64,
    /// `ηκ₂/κ`.
    pub eta_eff: f64,
    pub delta_cq: f64,
    /// Constant photocurrent offset from the bare cavity field.
    pub background_i: f64,
}

pub fn derive_params(p: &SystemParams) -> Result<DerivedParams> {
    p.validate()?;
    let kappa = p.kappa();
    let delta_cq = p.delta_c - p.delta_q;
    let alpha_c = Complex64::new((2.0 * p.kappa1).sqrt() * p.beta, 0.0) / Complex64::new(kappa, p.delta_c);
    let gamma_p = 2.0 * p.g * p.g * kappa / (kappa * kappa + delta_cq * delta_cq);
    let eta_eff = p.eta * p.kappa2 / kappa;
    let background_i = 2.0 * (2.0 * kappa * eta_eff).sqrt() * (alpha_c.re * p.theta.cos() + alpha_c.im * p.theta.sin());
    Ok(DerivedParams {
        kappa,
        alpha_c,
        chi: alpha_c * (2.0 * p.g),
        delta_chi: alpha_c * (2.0 * p.delta_g),
        gamma_p,
        theta_kappa: (-delta_cq).atan2(kappa),
        eta_eff,
        delta_cq,
        background_i,
    })
}

/// A named Lindblad operator.
#[derive(Debug, Clone, PartialEq)]
pub struct CollapseOp {
    pub label: &'static str,
    pub op: Operator,
}

/// The qubit-only model evolved by the stochastic master equation.
#[derive(Debug, Clone)]
pub struct EffectiveModel {
    pub params: SystemParams,
    pub derived: DerivedParams,
    pub h_eff: Operator,
    pub collapse_ops: Vec<CollapseOp>,
    /// `√(2κ₂)(α_c − i g S₋/(κ + iΔcq)) e^{−iθ}`.
    pub d_eff: Operator,
    /// Operator part of `d_eff` (its c-number part drops out of the measurement
    /// super-operator and only contributes the photocurrent background).
    pub d_operator: Operator,
    pub catalog: OperatorCatalog,
}

impl EffectiveModel {
    pub fn eta(&self) -> f64 {
        self.params.eta
    }

    pub fn coefficients(&self) -> PhotocurrentCoefficients {
        photocurrent_coefficients(self)
    }
}

pub fn build_effective_model(p: &SystemParams) -> Result<EffectiveModel> {
    let derived = derive_params(p)?;
    if !p.adiabatic_elimination_valid(&derived) {
        log::warn!(
            "κ = {} is not ≫ max(g, χ, γ∥, 1/τ); adiabatic elimination is questionable",
            derived.kappa
        );
    }
    let cat = build_operator_catalog();
    let alpha = derived.alpha_c;
    let couplings = [p.g + 0.5 * p.delta_g, p.g - 0.5 * p.delta_g];
    let detunings = [p.delta_q + 0.5 * p.delta_omega_q, p.delta_q - 0.5 * p.delta_omega_q];

    let mut h = Operator::zeros();
    for j in 0..2 {
        h += cat.sigma_z[j] * Complex64::new(0.5 * detunings[j], 0.0);
        h += cat.sigma_plus[j] * (alpha * couplings[j]) + cat.sigma_minus[j] * (alpha.conj() * couplings[j]);
    }
    let kappa = derived.kappa;
    let stark = derived.delta_cq * p.g * p.g / (kappa * kappa + derived.delta_cq * derived.delta_cq);
    h -= cat.s_plus * cat.s_minus * Complex64::new(stark, 0.0);

    let mut collapse_ops = vec![CollapseOp {
        label: "correlated",
        op: cat.s_minus * Complex64::new(derived.gamma_p.sqrt(), 0.0),
    }];
    if p.gamma_par > 0.0 {
        let s = Complex64::new(p.gamma_par.sqrt(), 0.0);
        collapse_ops.push(CollapseOp {
            label: "population_1",
            op: cat.sigma_minus[0] * s,
        });
        collapse_ops.push(CollapseOp {
            label: "population_2",
            op: cat.sigma_minus[1] * s,
        });
    }
    if p.tau_phase.is_finite() {
        let s = Complex64::new((0.5 / p.tau_phase).sqrt(), 0.0);
        collapse_ops.push(CollapseOp {
            label: "dephasing_1",
            op: cat.sigma_z[0] * s,
        });
        collapse_ops.push(CollapseOp {
            label: "dephasing_2",
            op: cat.sigma_z[1] * s,
        });
    }

    let lo = Complex64::from_polar(1.0, -p.theta);
    let root = (2.0 * p.kappa2).sqrt();
    let field_response = Complex64::new(0.0, -p.g) / Complex64::new(kappa, derived.delta_cq);
    let d_operator = cat.s_minus * (field_response * lo * root);
    let d_eff = Operator::identity() * (alpha * lo * root) + d_operator;

    Ok(EffectiveModel {
        params: *p,
        derived,
        h_eff: h,
        collapse_ops,
        d_eff,
        d_operator,
        catalog: cat,
    })
}

/// `I(t) = c_x⟨S_x⟩ + c_y⟨S_y⟩ + background + ξ(t)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhotocurrentCoefficients {
    pub c_x: f64,
    pub c_y: f64,
    pub background: f64,
}

pub fn photocurrent_coefficients(m: &EffectiveModel) -> PhotocurrentCoefficients {
    let d = &m.derived;
    let amp = (d.gamma_p * d.eta_eff).sqrt();
    let phase = m.params.theta - d.theta_kappa;
    PhotocurrentCoefficients {
        c_x: -amp * phase.sin(),
        c_y: -amp * phase.cos(),
        background: d.background_i,
    }
}

/// Norm of the triplet component of `h|−⟩`.
pub fn singlet_leakage(h: &Operator) -> f64 {
    let s = crate::spin::singlet();
    let out = h * s;
    let along = (s.adjoint() * out)[0];
    (out - s * along).norm()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spin::{basis_ket, singlet, trace_product, triplet_zero, EE, GG};

    fn base() -> SystemParams {
        SystemParams::bad_cavity(16.5, 10.0, -std::f64::consts::FRAC_PI_2)
    }

    #[test]
    fn preset_is_in_gamma_p_units() {
        let d = derive_params(&base()).unwrap();
        assert!((d.gamma_p - 1.0).abs() < 1e-12);
        assert!((d.chi.re - 16.5).abs() < 1e-9 && d.chi.im.abs() < 1e-12);
    }

    #[test]
    fn single_mirror_efficiency_equals_detector() {
        let mut p = base();
        p.kappa2 += p.kappa1;
        p.kappa1 = 0.0;
        p.eta = 0.7;
        let d = derive_params(&p).unwrap();
        assert_eq!(d.eta_eff, 0.7);
    }

    #[test]
    fn resonant_cavity_gives_real_field() {
        let p = base();
        let d = derive_params(&p).unwrap();
        assert_eq!(d.alpha_c.im, 0.0);
        assert_eq!(d.theta_kappa, (-d.delta_cq).atan2(d.kappa));
    }

    #[test]
    fn purcell_rate_from_coupling() {
        // κ = 5000, g = 50, Δcq ≪ κ ⇒ γp ≈ 2g²/κ = 1
        let p = SystemParams {
            kappa1: 0.0,
            kappa2: 5000.0,
            delta_c: 0.0,
            delta_q: 0.0,
            g: 50.0,
            delta_g: 0.0,
            delta_omega_q: 0.0,
            beta: 0.0,
            gamma_par: 0.0,
            tau_phase: f64::INFINITY,
            eta: 1.0,
            theta: 0.0,
        };
        let d = derive_params(&p).unwrap();
        assert!((d.gamma_p - 1.0).abs() < 1e-12);
        // √γp = g√(2κ)/|κ + iΔcq|
        let rhs = p.g * (2.0 * d.kappa).sqrt() / Complex64::new(d.kappa, d.delta_cq).norm();
        assert!((d.gamma_p.sqrt() - rhs).abs() < 1e-12);
    }

    #[test]
    fn zero_kappa_is_an_error() {
        let mut p = base();
        p.kappa1 = 0.0;
        p.kappa2 = 0.0;
        assert!(derive_params(&p).is_err());
        let mut p = base();
        p.eta = 1.5;
        assert!(derive_params(&p).is_err());
        let mut p = base();
        p.tau_phase = 0.0;
        assert!(derive_params(&p).is_err());
    }

    #[test]
    fn hamiltonian_on_resonance_is_rabi_minus_stark() {
        let mut p = SystemParams::bad_cavity(10.0, 0.0, 0.0);
        p.delta_q = 0.0;
        let m = build_effective_model(&p).unwrap();
        let cat = &m.catalog;
        let d = &m.derived;
        let stark = d.delta_cq * p.g * p.g / (d.kappa * d.kappa + d.delta_cq * d.delta_cq);
        let expect =
            cat.s_x * Complex64::new(d.chi.re / 2.0, 0.0) - cat.s_plus * cat.s_minus * Complex64::new(stark, 0.0);
        assert!((m.h_eff - expect).iter().all(|z| z.norm() < 1e-12));
        assert!((m.h_eff - m.h_eff.adjoint()).iter().all(|z| z.norm() < 1e-12));
    }

    #[test]
    fn decay_free_model_has_only_correlated_decay() {
        let m = build_effective_model(&base()).unwrap();
        assert_eq!(m.collapse_ops.len(), 1);
        let expect = m.catalog.s_minus * Complex64::new(m.derived.gamma_p.sqrt(), 0.0);
        assert!((m.collapse_ops[0].op - expect).iter().all(|z| z.norm() < 1e-14));

        let mut p = base();
        p.gamma_par = 0.01;
        p.tau_phase = 100.0;
        let m = build_effective_model(&p).unwrap();
        let labels: Vec<_> = m.collapse_ops.iter().map(|c| c.label).collect();
        assert_eq!(
            labels,
            [
                "correlated",
                "population_1",
                "population_2",
                "dephasing_1",
                "dephasing_2"
            ]
        );
    }

    #[test]
    fn singlet_is_stationary_and_dark() {
        let m = build_effective_model(&base()).unwrap();
        let s = singlet();
        let hs = m.h_eff * s;
        // oracle: direct projections onto the triplet states
        for t in [basis_ket(EE), triplet_zero(), basis_ket(GG)] {
            assert!((t.adjoint() * hs)[0].norm() < 1e-12);
        }
        assert!((m.collapse_ops[0].op * s).norm() < 1e-14);
        assert!(singlet_leakage(&m.h_eff) < 1e-12);

        let p = base().with_rabi_inhomogeneity(0.5).unwrap();
        let m = build_effective_model(&p).unwrap();
        assert!(singlet_leakage(&m.h_eff) > 0.1);
    }

    #[test]
    fn coefficients_match_measurement_operator() {
        // ⟨√η(d + d†)⟩ = c_x⟨S_x⟩ + c_y⟨S_y⟩ + background, for arbitrary states
        for theta in [0.0, -std::f64::consts::FRAC_PI_2, 0.7] {
            let mut p = SystemParams::bad_cavity(7.0, 3.0, theta);
            p.delta_c = 40.0;
            p.eta = 0.8;
            let m = build_effective_model(&p).unwrap();
            let c = photocurrent_coefficients(&m);
            let rho = {
                let mut k = basis_ket(EE) * Complex64::new(0.6, 0.0)
                    + triplet_zero() * Complex64::new(0.3, 0.5)
                    + basis_ket(GG) * Complex64::new(-0.2, 0.1);
                k /= Complex64::new(k.norm(), 0.0);
                k * k.adjoint()
            };
            let quad = m.d_eff + m.d_eff.adjoint();
            let lhs = p.eta.sqrt() * trace_product(&quad, &rho).re;
            let rhs = c.c_x * trace_product(&m.catalog.s_x, &rho).re
                + c.c_y * trace_product(&m.catalog.s_y, &rho).re
                + c.background;
            assert!((lhs - rhs).abs() < 1e-9 * lhs.abs().max(1.0), "{lhs} vs {rhs}");
        }
    }

    #[test]
    fn dc_phase_has_no_background() {
        let m = build_effective_model(&base()).unwrap();
        let c = photocurrent_coefficients(&m);
        assert!(c.background.abs() < 1e-9);
        assert!((c.c_x - (m.derived.gamma_p * m.derived.eta_eff).sqrt()).abs() < 1e-5);

        let m = build_effective_model(&SystemParams::bad_cavity(10.0, 0.0, 0.0)).unwrap();
        let c = photocurrent_coefficients(&m);
        let d = &m.derived;
        assert!((c.background - 2.0 * (2.0 * d.kappa * d.eta_eff).sqrt() * d.alpha_c.re).abs() < 1e-9);
        assert!(c.c_x.abs() < 1e-12);
    }

    #[test]
    fn no_purcell_decay_means_no_signal() {
        let mut p = base();
        p.g = 0.0;
        let m = build_effective_model(&p).unwrap();
        let c = photocurrent_coefficients(&m);
        assert_eq!((c.c_x, c.c_y), (0.0, 0.0));
    }

    #[test]
    fn adiabatic_flag() {
        let p = base();
        assert!(p.adiabatic_elimination_valid(&derive_params(&p).unwrap()));
        let mut p = base();
        p.g = p.kappa() / 10.0;
        assert!(!p.adiabatic_elimination_valid(&derive_params(&p).unwrap()));
    }
}
