// SPDX-License-Identifier: Apache-2.0

//! Positivity-preserving homodyne step in instrument form.
//!
//! For a record increment `y` the unnormalised update is
//!
//! ```text
//! M(y) = (1 − iK dt − ½η d² dt) + √η d y + ½η d² y²
//! ρ̃(y) = M(y) ρ' M(y)† + dt Σ_r c_r ρ' c_r†,     ρ' = S^{−½} ρ S^{−½}
//! ```
//!
//! where the residual jumps `c_r` are the collapse operators with the detected
//! share `η d†d` removed, and `S` is chosen so that `∫ φ_dt(y) tr ρ̃(y) dy = 1`
//! for every state. The increment is then drawn from its exact outcome
//! density `φ_dt(y) tr ρ̃(y)` by inverting the cumulative distribution at the
//! quantile of the supplied Wiener increment. The resulting map is completely
//! positive, its ensemble average is trace preserving, and expanding it in `dt`
//! reproduces the Milstein step of the nonlinear equation.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use nalgebra::SymmetricEigen;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::linalg::Operator;
use crate::model::EffectiveModel;
use crate::spin::trace_product;

const NEWTON_ITERATIONS: usize = 12;

#[derive(Debug, Clone)]
pub struct KrausMap {
    dt: f64,
    /// `M_i S^{−½}` for the powers `y⁰, y¹, y²`.
    m: [Operator; 3],
    residual: Vec<(Operator, Operator)>,
    /// `tr ρ̃(y) = Σ_k y^k tr(Q_k ρ)`.
    q: [Operator; 5],
    /// `√η⟨d + d†⟩` reads from this operator.
    quadrature: Operator,
    sqrt_eta: f64,
}

/// Outcome of one instrument step.
#[derive(Debug, Clone, Copy)]
pub struct KrausOutcome {
    /// Normalised state.
    pub rho: Operator,
    /// Trace of the unnormalised state (the outcome likelihood ratio).
    pub trace: f64,
    /// Measurement record increment `∫ (I − background) dt` over the step.
    pub record: f64,
}

fn scaled(op: &Operator, s: f64) -> Operator {
    op * Complex64::new(s, 0.0)
}

/// Collapse operators with the detected part `η d†d` taken out, each with the
/// sign of its contribution. The detected channel is proportional to one of
/// the collapse operators in every model built here, and then the subtraction
/// is done on that operator's rate, keeping every weight positive.
fn residual_jumps(model: &EffectiveModel) -> Vec<(Operator, f64)> {
    let eta = model.eta();
    let d = model.d_operator;
    let dd = d.adjoint() * d * Complex64::new(eta, 0.0);
    let dd_norm = dd.norm();
    let mut out = Vec::with_capacity(model.collapse_ops.len() + 1);
    let mut absorbed = dd_norm == 0.0;
    for c in &model.collapse_ops {
        if !absorbed {
            let cc = c.op.adjoint() * c.op;
            let ratio = dd_norm / cc.norm();
            if (dd - cc * Complex64::new(ratio, 0.0)).norm() <= 1e-12 * dd_norm && ratio <= 1.0 + 1e-12 {
                absorbed = true;
                let keep = (1.0 - ratio).max(0.0);
                if keep > 0.0 {
                    out.push((scaled(&c.op, keep.sqrt()), 1.0));
                }
                continue;
            }
        }
        out.push((c.op, 1.0));
    }
    if !absorbed {
        out.push((scaled(&d, eta.sqrt()), -1.0));
    }
    out
}

impl KrausMap {
    pub fn new(model: &EffectiveModel, dt: f64) -> Result<Self> {
        let eta = model.eta();
        let sqrt_eta = eta.sqrt();
        let d = model.d_operator;
        let d2 = d * d;
        let mut k = model.h_eff;
        for c in &model.collapse_ops {
            k -= c.op.adjoint() * c.op * Complex64::new(0.0, 0.5);
        }
        let m0 = Operator::identity() - k * Complex64::new(0.0, dt) - scaled(&d2, 0.5 * eta * dt);
        let m1 = scaled(&d, sqrt_eta);
        let m2 = scaled(&d2, 0.5 * eta);
        let jumps = residual_jumps(model);

        let mut s = m0.adjoint() * m0
            + (m1.adjoint() * m1 + m0.adjoint() * m2 + m2.adjoint() * m0) * Complex64::new(dt, 0.0)
            + m2.adjoint() * m2 * Complex64::new(3.0 * dt * dt, 0.0);
        for (c, sign) in &jumps {
            s += c.adjoint() * c * Complex64::new(dt * sign, 0.0);
        }
        let s = (s + s.adjoint()) * Complex64::new(0.5, 0.0);
        let eig = SymmetricEigen::new(s);
        if eig.eigenvalues.iter().any(|&l| l <= 0.0 || !l.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "dt",
                reason: format!("step {dt} too large for a positive instrument"),
            });
        }
        let inv_sqrt = Operator::from_diagonal(&eig.eigenvalues.map(|l| Complex64::new(l.powf(-0.5), 0.0)));
        let s_inv_half = eig.eigenvectors * inv_sqrt * eig.eigenvectors.adjoint();

        let m = [m0 * s_inv_half, m1 * s_inv_half, m2 * s_inv_half];
        let residual: Vec<(Operator, Operator)> = jumps
            .iter()
            .map(|(c, sign)| {
                let cs = c * s_inv_half;
                (cs, cs.adjoint() * Complex64::new(*sign, 0.0))
            })
            .collect();
        let mut q = [Operator::zeros(); 5];
        for i in 0..3 {
            for j in 0..3 {
                q[i + j] += m[j].adjoint() * m[i];
            }
        }
        for (c, c_adj) in &residual {
            q[0] += c_adj * c * Complex64::new(dt, 0.0);
        }
        Ok(Self {
            dt,
            m,
            residual,
            q,
            quadrature: d + d.adjoint(),
            sqrt_eta,
        })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Polynomial coefficients of `tr ρ̃(y)`.
    fn likelihood(&self, rho: &Operator) -> [f64; 5] {
        let mut n = [0.0; 5];
        for (k, q) in self.q.iter().enumerate() {
            n[k] = trace_product(q, rho).re;
        }
        n
    }

    /// Record increment whose outcome-distribution quantile equals that of
    /// `dw` under `N(0, dt)`.
    fn sample_record(&self, n: &[f64; 5], rho: &Operator, dw: f64) -> f64 {
        let sigma = self.dt.sqrt();
        let z0 = dw / sigma;
        let upper = z0 > 0.0;
        let norm = n[0] + n[2] * self.dt + 3.0 * n[4] * self.dt * self.dt;
        let target = norm * gaussian_tail(z0, upper);
        let mean = self.sqrt_eta * trace_product(&self.quadrature, rho).re;
        let mut y = dw + mean * self.dt;
        for _ in 0..NEWTON_ITERATIONS {
            let f = weighted_tail(n, y, sigma, upper) - target;
            let density = gaussian_density(y, sigma) * poly(n, y);
            let slope = if upper { -density } else { density };
            if !(slope.abs() > 0.0) {
                break;
            }
            let step = f / slope;
            if !step.is_finite() {
                break;
            }
            y -= step;
            if step.abs() <= 1e-15 * (y.abs() + sigma) {
                break;
            }
        }
        y
    }

    /// One instrument step driven by the Wiener increment `dw`.
    pub fn step(&self, rho: &Operator, dw: f64) -> KrausOutcome {
        let n = self.likelihood(rho);
        let y = self.sample_record(&n, rho, dw);
        let m = self.m[0] + self.m[1] * Complex64::new(y, 0.0) + self.m[2] * Complex64::new(y * y, 0.0);
        let mut next = m * rho * m.adjoint();
        for (c, c_adj) in &self.residual {
            next += c * rho * c_adj * Complex64::new(self.dt, 0.0);
        }
        let trace = next.trace().re;
        KrausOutcome {
            rho: next / Complex64::new(trace, 0.0),
            trace,
            record: y,
        }
    }
}

fn poly(n: &[f64; 5], y: f64) -> f64 {
    n.iter().rev().fold(0.0, |acc, c| acc * y + c)
}

fn gaussian_density(y: f64, sigma: f64) -> f64 {
    let z = y / sigma;
    (-0.5 * z * z).exp() / (sigma * (2.0 * PI).sqrt())
}

/// `P(Z > z)` when `upper`, else `P(Z ≤ z)`, for standard normal `Z`.
fn gaussian_tail(z: f64, upper: bool) -> f64 {
    let arg = if upper { z } else { -z };
    0.5 * libm::erfc(arg * FRAC_1_SQRT_2)
}

/// `∫ Σ_k n_k s^k φ_σ(s) ds` over `(y, ∞)` when `upper`, else `(−∞, y]`.
fn weighted_tail(n: &[f64; 5], y: f64, sigma: f64, upper: bool) -> f64 {
    let var = sigma * sigma;
    let pdf = gaussian_density(y, sigma);
    // upper: H_k = (k−1)σ²H_{k−2} + σ² y^{k−1} φ;  lower: G_k = (k−1)σ²G_{k−2} − σ² y^{k−1} φ
    let sign = if upper { 1.0 } else { -1.0 };
    let mut m = [0.0; 5];
    m[0] = gaussian_tail(y / sigma, upper);
    m[1] = sign * var * pdf;
    let mut y_pow = 1.0;
    for k in 2..5 {
        y_pow *= y;
        m[k] = (k - 1) as f64 * var * m[k - 2] + sign * var * y_pow * pdf;
    }
    n.iter().zip(&m).map(|(a, b)| a * b).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_effective_model, SystemParams};
    use crate::sme::{default_dt, Stepper};
    use crate::spin::{basis_ket, singlet_overlap, EG};

    fn dc_model() -> EffectiveModel {
        build_effective_model(&SystemParams::bad_cavity(16.5, 10.0, -std::f64::consts::FRAC_PI_2)).unwrap()
    }

    fn state() -> Operator {
        let mut k = basis_ket(0) * Complex64::new(0.3, 0.0)
            + basis_ket(1) * Complex64::new(0.8, 0.0)
            + basis_ket(2) * Complex64::new(0.1, 0.2)
            + basis_ket(3) * Complex64::new(0.4, 0.0);
        k /= Complex64::new(k.norm(), 0.0);
        k * k.adjoint()
    }

    /// Gauss–Hermite expectation over `dw ~ N(0, dt)` by composite Simpson
    /// on a wide standard-normal grid.
    fn expect(dt: f64, f: impl Fn(f64) -> f64) -> f64 {
        let n = 4000;
        let (a, b) = (-9.0f64, 9.0f64);
        let h = (b - a) / n as f64;
        (0..=n)
            .map(|i| {
                let z = a + i as f64 * h;
                let w = if i == 0 || i == n {
                    1.0
                } else if i % 2 == 1 {
                    4.0
                } else {
                    2.0
                };
                w * (-0.5 * z * z).exp() / (2.0 * PI).sqrt() * f(z * dt.sqrt())
            })
            .sum::<f64>()
            * h
            / 3.0
    }

    #[test]
    fn average_map_is_trace_preserving() {
        let m = dc_model();
        let dt = default_dt(&m);
        let k = KrausMap::new(&m, dt).unwrap();
        let rho = state();
        let n = k.likelihood(&rho);
        let z = n[0] + n[2] * dt + 3.0 * n[4] * dt * dt;
        assert!((z - 1.0).abs() < 1e-12, "{z}");
    }

    #[test]
    fn singlet_population_is_an_exact_martingale() {
        let m = dc_model();
        let dt = 4.0 * default_dt(&m);
        let k = KrausMap::new(&m, dt).unwrap();
        let rho = state();
        let mean = expect(dt, |dw| singlet_overlap(&k.step(&rho, dw).rho));
        assert!((mean - singlet_overlap(&rho)).abs() < 1e-9, "{mean}");
    }

    #[test]
    fn record_has_the_conditional_mean() {
        // E[y] = √η⟨d + d†⟩dt + O(dt²)
        let m = dc_model();
        let dt = default_dt(&m);
        let k = KrausMap::new(&m, dt).unwrap();
        let rho = state();
        let mean = expect(dt, |dw| k.step(&rho, dw).record);
        let c = m.coefficients();
        let sx = trace_product(&m.catalog.s_x, &rho).re;
        let sy = trace_product(&m.catalog.s_y, &rho).re;
        let expect_mean = (c.c_x * sx + c.c_y * sy) * dt;
        assert!((mean - expect_mean).abs() < 20.0 * dt * dt, "{mean} vs {expect_mean}");
    }

    #[test]
    fn outcome_quantile_is_monotone() {
        let m = dc_model();
        let dt = default_dt(&m);
        let k = KrausMap::new(&m, dt).unwrap();
        let rho = state();
        let mut last = f64::NEG_INFINITY;
        for i in -60..=60 {
            let y = k.step(&rho, i as f64 * 0.1 * dt.sqrt()).record;
            assert!(y > last);
            last = y;
        }
    }

    #[test]
    fn matches_explicit_step_to_milstein_order() {
        let m = dc_model();
        let rho = *crate::sme::DensityMatrix::from_ket(&basis_ket(EG)).matrix();
        let stepper = Stepper::new(&m);
        let diff = |dt: f64| {
            let k = KrausMap::new(&m, dt).unwrap();
            let dw = 0.8 * dt.sqrt();
            let a = stepper.step(&rho, dt, dw).rho;
            (a - k.step(&rho, dw).rho).iter().map(|z| z.norm()).fold(0.0, f64::max)
        };
        let (coarse, fine) = (diff(1e-3), diff(2.5e-4));
        assert!(coarse < 2e-3, "{coarse}");
        assert!(coarse / fine > 6.0, "{coarse} / {fine}");
    }

    #[test]
    fn unmeasured_model_is_deterministic_and_positive() {
        let mut p = SystemParams::bad_cavity(16.5, 10.0, 0.0);
        p.eta = 0.0;
        let m = build_effective_model(&p).unwrap();
        let dt = default_dt(&m);
        let k = KrausMap::new(&m, dt).unwrap();
        let rho = state();
        let a = k.step(&rho, 0.01);
        let b = k.step(&rho, -0.02);
        assert!((a.rho - b.rho).norm() < 1e-14);
    }
}
