// SPDX-License-Identifier: Apache-2.0

//! Steady state and photocurrent spectrum of the driven triplet space.
//!
//! Without qubit decay the triplet space decouples and the moments
//! `x = [⟨S₊⟩, ⟨S₋⟩, ⟨S_z⟩, ⟨S₊S_z⟩, ⟨S_zS₋⟩, ⟨S₊²⟩, ⟨S₋²⟩, ⟨S_z²⟩]` obey the
//! closed linear system `ẋ = A x − b` (Stark shift neglected). By the
//! quantum regression theorem the same matrix propagates the two-time
//! correlations entering the photocurrent spectrum, whose steady-state form is
//!
//! `S(Δ) = 1/2π − (γp ηeff/2π) {vᵀ[(A + iΔ)⁻¹ + (A − iΔ)⁻¹] w + c.c.}`,
//! `w = (C − ⟨S₋⟩) x_SS + d`.
//!
//! On the triplet space `S_z²S₋ = −2 S_zS₋`, which fixes the last row of `C`.
//!
//! A three-dimensional single-qubit system with decay and Stark shift uses
//! the same entry points.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::ComplexMatrix;
use crate::model::EffectiveModel;
use crate::signals::{SpectrumKind, SpectrumTable};

const I: Complex64 = Complex64 { re: 0.0, im: 1.0 };

fn re(x: f64) -> Complex64 {
    Complex64::new(x, 0.0)
}

fn im(x: f64) -> Complex64 {
    Complex64::new(0.0, x)
}

/// Shot-noise floor of the normalised photocurrent spectrum.
pub const SHOT_NOISE_FLOOR: f64 = 1.0 / (2.0 * PI);

/// Moment vector; eight entries for the triplet space, three for one qubit.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentVector(pub Vec<Complex64>);

impl MomentVector {
    pub fn entries(&self) -> &[Complex64] {
        &self.0
    }

    pub fn s_minus(&self) -> Complex64 {
        self.0[1]
    }

    /// `⟨S_x⟩ = ⟨S₊⟩ + ⟨S₋⟩` (`⟨σ_x⟩` for one qubit).
    pub fn s_x(&self) -> f64 {
        (self.0[0] + self.0[1]).re
    }

    pub fn s_y(&self) -> f64 {
        ((self.0[0] - self.0[1]) / I).re
    }

    pub fn s_z(&self) -> f64 {
        self.0[2].re
    }

    /// Largest violation of the pairing `x₂ = x₁*`, `x₅ = x₄*`, `x₇ = x₆*` and of
    /// the reality of `x₃`, `x₈`.
    pub fn conjugation_defect(&self) -> f64 {
        let x = &self.0;
        let mut defect = (x[1] - x[0].conj()).norm().max(x[2].im.abs());
        if x.len() == 8 {
            defect = defect
                .max((x[4] - x[3].conj()).norm())
                .max((x[6] - x[5].conj()).norm())
                .max(x[7].im.abs());
        }
        defect
    }
}

/// Inputs of a moment system, in `γp` units or any consistent rate unit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnalyticParams {
    pub chi: f64,
    pub delta_q: f64,
    pub gamma_p: f64,
    pub theta: f64,
    pub theta_kappa: f64,
    pub eta_eff: f64,
}

impl AnalyticParams {
    /// Parameters of an effective model (real part of its Rabi frequency).
    pub fn from_model(model: &EffectiveModel) -> Self {
        let d = &model.derived;
        Self {
            chi: d.chi.re,
            delta_q: model.params.delta_q,
            gamma_p: d.gamma_p,
            theta: model.params.theta,
            theta_kappa: d.theta_kappa,
            eta_eff: d.eta_eff,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MomentSystem {
    pub a: ComplexMatrix,
    pub b: Vec<Complex64>,
    pub c: ComplexMatrix,
    pub d: Vec<Complex64>,
    pub v: Vec<Complex64>,
    pub params: AnalyticParams,
}

fn readout_vector(n: usize, p: &AnalyticParams) -> Vec<Complex64> {
    let mut v = vec![re(0.0); n];
    v[0] = re(1.0);
    v[1] = -Complex64::from_polar(1.0, -2.0 * (p.theta - p.theta_kappa));
    v
}

/// The eight-dimensional triplet-space system.
pub fn build_moment_system(p: AnalyticParams) -> MomentSystem {
    let AnalyticParams {
        chi: x,
        delta_q: dq,
        gamma_p: g,
        ..
    } = p;
    let z = re(0.0);
    #[rustfmt::skip]
    let a = [
        im(dq), z, im(-x / 2.0), re(g / 2.0), z, z, z, z,
        z, im(-dq), im(x / 2.0), z, re(g / 2.0), z, z, z,
        im(-x), im(x), re(-g), z, z, z, z, re(g / 2.0),
        re(-4.0 * g), z, im(x / 2.0), Complex64::new(-3.0 * g, dq), z, im(-x), z, im(-0.75 * x),
        z, re(-4.0 * g), im(-x / 2.0), z, Complex64::new(-3.0 * g, -dq), z, im(x), im(0.75 * x),
        im(-x), z, z, im(-x), z, Complex64::new(-g, 2.0 * dq), z, z,
        z, im(x), z, z, im(x), z, Complex64::new(-g, -2.0 * dq), z,
        im(-2.0 * x), im(2.0 * x), re(-2.0 * g), im(-2.0 * x), im(2.0 * x), z, z, re(-3.0 * g),
    ];
    let b = vec![z, z, re(4.0 * g), im(-2.0 * x), im(2.0 * x), z, z, re(-8.0 * g)];
    #[rustfmt::skip]
    let c = [
        0.0, 0.0, 0.5, 0.0, 0.0, 0.0, 0.0, -0.25,
        0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0,
        0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0,
        0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0,
        0.0, 0.0, 0.0, 0.0, 0.0, 0.0, -2.0, 0.0,
        2.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0,
        0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0,
        0.0, 0.0, 0.0, 0.0, -2.0, 0.0, 0.0, 0.0,
    ];
    let d = [2.0, 0.0, 0.0, -4.0, 0.0, 0.0, 0.0, 0.0].map(re).to_vec();
    MomentSystem {
        a: ComplexMatrix::from_row_major(8, 8, &a).expect("8×8"),
        b,
        c: ComplexMatrix::from_real_row_major(8, 8, &c).expect("8×8"),
        d,
        v: readout_vector(8, &p),
        params: p,
    }
}

/// Decay rates of the single-qubit system.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SingleQubitRates {
    /// `γ∥ + γp`.
    pub gamma_par_eff: f64,
    /// `1/τ + γ∥,eff/2`.
    pub gamma_perp_eff: f64,
    /// `Δq − γp Δcq/(2κ)`.
    pub delta_q_eff: f64,
}

impl SingleQubitRates {
    pub fn new(gamma_par: f64, tau: f64, gamma_p: f64, delta_q: f64, delta_cq: f64, kappa: f64) -> Self {
        let gamma_par_eff = gamma_par + gamma_p;
        Self {
            gamma_par_eff,
            gamma_perp_eff: 1.0 / tau + gamma_par_eff / 2.0,
            delta_q_eff: delta_q - gamma_p * delta_cq / (2.0 * kappa),
        }
    }
}

/// The three-dimensional system for `[⟨σ₊⟩, ⟨σ₋⟩, ⟨σ_z⟩]`. `p.delta_q` is
/// ignored in favour of `rates.delta_q_eff`.
pub fn single_qubit_system(p: AnalyticParams, rates: SingleQubitRates) -> MomentSystem {
    let SingleQubitRates {
        gamma_par_eff: gpar,
        gamma_perp_eff: gperp,
        delta_q_eff: dq,
    } = rates;
    let x = p.chi;
    let z = re(0.0);
    #[rustfmt::skip]
    let a = [
        -Complex64::new(gperp, -dq), z, im(-x / 2.0),
        z, -Complex64::new(gperp, dq), im(x / 2.0),
        im(-x), im(x), re(-gpar),
    ];
    #[rustfmt::skip]
    let c = [
        0.0, 0.0, 0.5,
        0.0, 0.0, 0.0,
        0.0, -1.0, 0.0,
    ];
    MomentSystem {
        a: ComplexMatrix::from_row_major(3, 3, &a).expect("3×3"),
        b: vec![z, z, re(gpar)],
        c: ComplexMatrix::from_real_row_major(3, 3, &c).expect("3×3"),
        d: vec![re(0.5), z, z],
        v: readout_vector(3, &p),
        params: AnalyticParams { delta_q: dq, ..p },
    }
}

/// `x_SS = A⁻¹ b`.
pub fn steady_state(ms: &MomentSystem) -> Result<MomentVector> {
    ms.a.solve(&ms.b).map(MomentVector)
}

/// Closed-form triplet-space `⟨S_x⟩_SS`.
pub fn mean_sx_closed_form(chi: f64, delta_q: f64, gamma_p: f64) -> f64 {
    let (g2, d2, c2) = (gamma_p * gamma_p, delta_q * delta_q, chi * chi);
    -2.0 * chi * delta_q * (g2 + 4.0 * d2 + 2.0 * c2) / ((g2 + 4.0 * d2) * (g2 + d2 + c2) + 0.75 * c2 * c2)
}

/// Closed-form single-qubit `⟨σ_x⟩_SS`.
pub fn single_qubit_sx_closed_form(chi: f64, rates: SingleQubitRates) -> f64 {
    let SingleQubitRates {
        gamma_par_eff: gpar,
        gamma_perp_eff: gperp,
        delta_q_eff: dq,
    } = rates;
    -chi * dq / (dq * dq + gperp * gperp * (1.0 + chi * chi / (gperp * gpar)))
}

/// `w = (C − ⟨S₋⟩) x_SS + d = y(0) − y(∞)`.
pub fn regression_initial(ms: &MomentSystem, x_ss: &MomentVector) -> Result<Vec<Complex64>> {
    let cx = ms.c.mul_vec(&x_ss.0)?;
    let s_minus = x_ss.s_minus();
    Ok(cx
        .iter()
        .zip(&x_ss.0)
        .zip(&ms.d)
        .map(|((c, x), d)| c - s_minus * x + d)
        .collect())
}

/// Steady-state spectrum evaluator; caches `x_SS` and `w`.
#[derive(Debug, Clone)]
pub struct SpectrumModel {
    ms: MomentSystem,
    x_ss: MomentVector,
    w: Vec<Complex64>,
}

impl SpectrumModel {
    pub fn new(ms: MomentSystem) -> Result<Self> {
        let x_ss = steady_state(&ms)?;
        let w = regression_initial(&ms, &x_ss)?;
        Ok(Self { ms, x_ss, w })
    }

    pub fn steady_state(&self) -> &MomentVector {
        &self.x_ss
    }

    pub fn system(&self) -> &MomentSystem {
        &self.ms
    }

    pub fn regression_initial(&self) -> &[Complex64] {
        &self.w
    }

    fn resolvent_term(&self, shift: Complex64) -> Result<Complex64> {
        let n = self.ms.b.len();
        let mut m = self.ms.a.clone();
        for k in 0..n {
            m.set(k, k, m.get(k, k) + shift);
        }
        let r = m.solve(&self.w)?;
        Ok(self.ms.v.iter().zip(&r).map(|(v, r)| v * r).sum())
    }

    /// `S(Δ)`.
    pub fn value(&self, delta: f64) -> Result<f64> {
        let sum = self.resolvent_term(im(delta))? + self.resolvent_term(im(-delta))?;
        let p = &self.ms.params;
        Ok(SHOT_NOISE_FLOOR - p.gamma_p * p.eta_eff / PI * sum.re)
    }

    pub fn table(&self, grid: &[f64]) -> Result<SpectrumTable> {
        Ok(SpectrumTable {
            frequencies: grid.to_vec(),
            values: grid.iter().map(|&d| self.value(d)).collect::<Result<_>>()?,
            kind: SpectrumKind::Analytic,
        })
    }

    /// Regular part of the current autocorrelation,
    /// `R(τ) − δ(τ) = γp ηeff (vᵀ e^{Aτ} w + c.c.)` for `τ ≥ 0`.
    pub fn correlation(&self, tau: f64) -> Result<f64> {
        let prop = self.ms.a.scale(re(tau)).exp()?;
        let y = prop.mul_vec(&self.w)?;
        let s: Complex64 = self.ms.v.iter().zip(&y).map(|(v, y)| v * y).sum();
        let p = &self.ms.params;
        Ok(2.0 * p.gamma_p * p.eta_eff * s.re)
    }
}

impl SpectrumModel {
    /// Expected periodogram of a stationary record of `n` samples spaced `dt`:
    /// the steady-state spectrum seen through the finite-record (Fejér) window,
    /// `(1/2π)[1 + dt Σ_{|m|<n} (1 − |m|/n) R(|m|dt) cos(Δ m dt)]`.
    pub fn finite_record_expectation(&self, n: usize, dt: f64, frequencies: &[f64]) -> Result<Vec<f64>> {
        let step = self.ms.a.scale(re(dt)).exp()?;
        let p = &self.ms.params;
        let mut r = Vec::with_capacity(n);
        let mut y = self.w.clone();
        for _ in 0..n {
            let s: Complex64 = self.ms.v.iter().zip(&y).map(|(v, y)| v * y).sum();
            r.push(2.0 * p.gamma_p * p.eta_eff * s.re);
            y = step.mul_vec(&y)?;
        }
        Ok(frequencies
            .iter()
            .map(|&delta| {
                let mut acc = r[0];
                for (m, rm) in r.iter().enumerate().skip(1) {
                    acc += 2.0 * (1.0 - m as f64 / n as f64) * rm * (delta * m as f64 * dt).cos();
                }
                SHOT_NOISE_FLOOR * (1.0 + dt * acc)
            })
            .collect())
    }
}

pub fn analytic_spectrum(ms: &MomentSystem, grid: &[f64]) -> Result<SpectrumTable> {
    SpectrumModel::new(ms.clone())?.table(grid)
}

/// Position, full width at half maximum and height above the shot-noise floor
/// of the dominant spectral peak.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeakReport {
    pub delta0: f64,
    pub fwhm: f64,
    pub height: f64,
}

/// Locates the highest sample, refines it by a parabola through the top three
/// samples and measures the width at `floor + height/2` by linear
/// interpolation between samples.
pub fn peak_characterize(table: &SpectrumTable) -> Result<PeakReport> {
    peak_characterize_with_floor(table, SHOT_NOISE_FLOOR)
}

pub fn peak_characterize_with_floor(table: &SpectrumTable, floor: f64) -> Result<PeakReport> {
    let (f, s) = (&table.frequencies, &table.values);
    let n = s.len();
    if n < 3 || f.len() != n {
        return Err(Error::Empty("spectrum table"));
    }
    let k = (1..n - 1).max_by(|&a, &b| s[a].total_cmp(&s[b])).expect("n ≥ 3");
    if s[k] < s[0] || s[k] < s[n - 1] || s[k] <= floor + 1e-12 {
        return Err(Error::NoPeak);
    }
    let (y0, y1, y2) = (s[k - 1], s[k], s[k + 1]);
    let curvature = y0 - 2.0 * y1 + y2;
    let (offset, top) = if curvature < 0.0 {
        let u = 0.5 * (y0 - y2) / curvature;
        (u, y1 - 0.25 * (y0 - y2) * u)
    } else {
        (0.0, y1)
    };
    // neighbouring samples may be unevenly spaced
    let delta0 = if offset >= 0.0 {
        f[k] + offset * (f[k + 1] - f[k])
    } else {
        f[k] + offset * (f[k] - f[k - 1])
    };
    let height = top - floor;
    let half = floor + height / 2.0;
    let cross = |a: usize, b: usize| f[a] + (half - s[a]) * (f[b] - f[a]) / (s[b] - s[a]);
    let left = (0..k).rev().find(|&j| s[j] < half).map(|j| cross(j, j + 1));
    let right = (k + 1..n).find(|&j| s[j] < half).map(|j| cross(j - 1, j));
    match (left, right) {
        (Some(l), Some(r)) => Ok(PeakReport {
            delta0,
            fwhm: r - l,
            height,
        }),
        _ => Err(Error::NoPeak),
    }
}

/// Uniform grid of `n` points on `[lo, hi]`.
pub fn linear_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64).collect()
}
