// SPDX-License-Identifier: Apache-2.0

//! Milstein integration of the homodyne stochastic master equation
//!
//! ```text
//! dρ = (−i[H, ρ] + Σ_m D[c_m]ρ) dt + √η H[d]ρ dW
//! D[c]ρ = cρc† − ½{c†c, ρ}
//! H[d]ρ = dρ + ρd† − ⟨d + d†⟩ρ
//! ```
//!
//! with a single real Wiener process. The Milstein correction is the
//! directional derivative of the diffusion along itself.
//!
//! Two update rules are provided. [`Scheme::Explicit`] applies the Milstein
//! formula literally. [`Scheme::Kraus`] (the default) advances the state with
//! the positive instrument of [`crate::kraus`], which agrees with the explicit
//! step through the Milstein order. The explicit step loses positivity at a
//! rate of order `(‖H‖dt)²` per step from pure states, which at the default
//! step size of strongly driven models quickly exceeds the monitor's floor.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, StepDiagnostics};
use crate::kraus::KrausMap;
use crate::linalg::{operator_eigen_min, Operator};
use crate::model::{EffectiveModel, PhotocurrentCoefficients};
use crate::noise::{Checksum, NoiseKey, WienerStream};
use crate::spin::{projector, singlet_overlap, trace_product, Ket};

/// Trace deviation (before renormalisation) that aborts a trajectory.
pub const TRACE_ABORT: f64 = 1e-6;
/// Smallest eigenvalue tolerated by the positivity monitor.
pub const POSITIVITY_FLOOR: f64 = -1e-6;

/// Unit-trace Hermitian two-qubit state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DensityMatrix(Operator);

impl DensityMatrix {
    pub fn from_ket(ket: &Ket) -> Self {
        let n = ket.norm_squared();
        Self(projector(ket) / Complex64::new(n, 0.0))
    }

    /// Validates Hermiticity (1e−9) and unit trace (1e−9).
    pub fn new(op: Operator) -> Result<Self> {
        let dev = (op - op.adjoint()).iter().map(|z| z.norm()).fold(0.0, f64::max);
        if dev > 1e-9 {
            return Err(Error::NotHermitian { deviation: dev });
        }
        let tr = op.trace();
        if (tr - Complex64::new(1.0, 0.0)).norm() > 1e-9 {
            return Err(Error::InvalidParameter {
                name: "rho",
                reason: format!("trace {tr} differs from 1"),
            });
        }
        Ok(Self(op))
    }

    pub(crate) fn new_unchecked(op: Operator) -> Self {
        Self(op)
    }

    pub fn matrix(&self) -> &Operator {
        &self.0
    }

    pub fn trace(&self) -> f64 {
        self.0.trace().re
    }

    pub fn expect(&self, op: &Operator) -> Complex64 {
        trace_product(op, &self.0)
    }

    /// `⟨−|ρ|−⟩`
    pub fn singlet_overlap(&self) -> f64 {
        singlet_overlap(&self.0)
    }

    pub fn min_eigenvalue(&self) -> f64 {
        operator_eigen_min(&self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// `ρ + drift·dt + b·dW + ½ Db·(dW² − dt)`
    Explicit,
    /// Positivity-preserving regrouping, normalised every step.
    #[default]
    Kraus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegratorConfig {
    pub dt: f64,
    pub t_final: f64,
    pub renormalize: bool,
    /// Overlap samples are taken every `record_stride` steps.
    pub record_stride: usize,
    pub rng_master_seed: u64,
    /// Steps between positivity checks (0 disables the monitor).
    pub positivity_check_stride: usize,
    pub scheme: Scheme,
}

/// `10⁻² / max(|χ|, |Δq|, γp, γ∥, 1/τ, |δχ|, |δωq|)`.
pub fn default_dt(model: &EffectiveModel) -> f64 {
    1e-2 / fastest_rate(model)
}

fn fastest_rate(model: &EffectiveModel) -> f64 {
    let p = &model.params;
    let d = &model.derived;
    [
        d.chi.norm(),
        p.delta_q.abs(),
        d.gamma_p,
        p.gamma_par,
        1.0 / p.tau_phase,
        d.delta_chi.norm(),
        p.delta_omega_q.abs(),
    ]
    .into_iter()
    .fold(f64::MIN_POSITIVE, f64::max)
}

impl IntegratorConfig {
    /// Uses the default step rule, shrunk so that `t_final` is a whole number
    /// of steps.
    pub fn for_model(model: &EffectiveModel, t_final: f64, seed: u64) -> Self {
        Self::with_dt(default_dt(model), t_final, seed)
    }

    pub fn with_dt(max_dt: f64, t_final: f64, seed: u64) -> Self {
        let n = (t_final / max_dt).ceil().max(1.0);
        Self {
            dt: t_final / n,
            t_final,
            renormalize: true,
            record_stride: 1,
            rng_master_seed: seed,
            positivity_check_stride: 50,
            scheme: Scheme::default(),
        }
    }

    pub fn steps(&self) -> usize {
        (self.t_final / self.dt).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "dt",
                reason: format!("must be positive, got {}", self.dt),
            });
        }
        if !(self.t_final > 0.0 && self.t_final.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "t_final",
                reason: format!("must be positive, got {}", self.t_final),
            });
        }
        if self.record_stride == 0 {
            return Err(Error::InvalidParameter {
                name: "record_stride",
                reason: "must be at least 1".into(),
            });
        }
        Ok(())
    }

    /// Whether `dt` respects the 10⁻²-of-fastest-timescale rule for `model`.
    pub fn dt_within_rule(&self, model: &EffectiveModel) -> bool {
        self.dt <= default_dt(model) * (1.0 + 1e-12)
    }
}

/// Precomputed operators for repeated steps of one model.
#[derive(Debug, Clone)]
pub struct Stepper {
    /// `−i(H − (i/2)Σ c†c)`
    generator: Operator,
    jumps: Vec<(Operator, Operator)>,
    d: Operator,
    sqrt_eta: f64,
    s_minus: Operator,
    coefficients: PhotocurrentCoefficients,
}

/// Result of one step before any renormalisation.
#[derive(Debug, Clone, Copy)]
pub struct StepOutput {
    pub rho: Operator,
    pub trace: f64,
}

/// Either update rule, prepared for a fixed step size.
#[derive(Debug, Clone)]
pub struct Integrator {
    stepper: Stepper,
    kraus: Option<KrausMap>,
    dt: f64,
}

/// State after one step together with the measured record increment
/// `(I − background)·dt`.
#[derive(Debug, Clone, Copy)]
pub struct Advance {
    pub out: StepOutput,
    pub record: f64,
}

impl Integrator {
    pub fn new(model: &EffectiveModel, scheme: Scheme, dt: f64) -> Result<Self> {
        let kraus = match scheme {
            Scheme::Explicit => None,
            Scheme::Kraus => Some(KrausMap::new(model, dt)?),
        };
        Ok(Self {
            stepper: Stepper::new(model),
            kraus,
            dt,
        })
    }

    pub fn scheme(&self) -> Scheme {
        if self.kraus.is_some() {
            Scheme::Kraus
        } else {
            Scheme::Explicit
        }
    }

    pub fn stepper(&self) -> &Stepper {
        &self.stepper
    }

    pub fn advance(&self, rho: &Operator, dw: f64) -> Advance {
        match &self.kraus {
            Some(k) => {
                let o = k.step(rho, dw);
                Advance {
                    out: StepOutput {
                        rho: o.rho * Complex64::new(o.trace, 0.0),
                        trace: o.trace,
                    },
                    record: o.record,
                }
            }
            None => {
                let signal = self.stepper.mean_current(rho) - self.stepper.coefficients.background;
                Advance {
                    out: self.stepper.step(rho, self.dt, dw),
                    record: signal * self.dt + dw,
                }
            }
        }
    }
}

impl Stepper {
    pub fn new(model: &EffectiveModel) -> Self {
        let mut k = model.h_eff;
        for c in &model.collapse_ops {
            k -= c.op.adjoint() * c.op * Complex64::new(0.0, 0.5);
        }
        Self {
            generator: k * Complex64::new(0.0, -1.0),
            jumps: model.collapse_ops.iter().map(|c| (c.op, c.op.adjoint())).collect(),
            d: model.d_operator,
            sqrt_eta: model.eta().sqrt(),
            s_minus: model.catalog.s_minus,
            coefficients: model.coefficients(),
        }
    }

    pub fn drift(&self, rho: &Operator) -> Operator {
        let m = self.generator * rho;
        let mut out = m + m.adjoint();
        for (c, c_adj) in &self.jumps {
            out += c * rho * c_adj;
        }
        out
    }

    /// Returns `b(ρ)` and `⟨d + d†⟩_ρ`.
    fn diffusion_with_quadrature(&self, rho: &Operator) -> (Operator, f64) {
        let dr = self.d * rho;
        let q = 2.0 * dr.trace().re;
        let b = (dr + dr.adjoint() - rho * Complex64::new(q, 0.0)) * Complex64::new(self.sqrt_eta, 0.0);
        (b, q)
    }

    pub fn diffusion(&self, rho: &Operator) -> Operator {
        self.diffusion_with_quadrature(rho).0
    }

    /// Directional derivative of the diffusion along `b`.
    fn milstein_correction(&self, rho: &Operator, b: &Operator, q: f64) -> Operator {
        let db = self.d * b;
        let qb = 2.0 * db.trace().re;
        (db + db.adjoint() - b * Complex64::new(q, 0.0) - rho * Complex64::new(qb, 0.0))
            * Complex64::new(self.sqrt_eta, 0.0)
    }

    /// One Milstein step; no renormalisation.
    pub fn step(&self, rho: &Operator, dt: f64, dw: f64) -> StepOutput {
        let drift = self.drift(rho);
        let (b, q) = self.diffusion_with_quadrature(rho);
        let corr = self.milstein_correction(rho, &b, q);
        let next = rho
            + drift * Complex64::new(dt, 0.0)
            + b * Complex64::new(dw, 0.0)
            + corr * Complex64::new(0.5 * (dw * dw - dt), 0.0);
        StepOutput {
            trace: next.trace().re,
            rho: next,
        }
    }

    /// Deterministic (unconditioned) master-equation step, classical RK4.
    pub fn rk4_step(&self, rho: &Operator, dt: f64) -> Operator {
        let h = Complex64::new(dt, 0.0);
        let half = Complex64::new(0.5 * dt, 0.0);
        let k1 = self.drift(rho);
        let k2 = self.drift(&(rho + k1 * half));
        let k3 = self.drift(&(rho + k2 * half));
        let k4 = self.drift(&(rho + k3 * h));
        rho + (k1 + k2 * Complex64::new(2.0, 0.0) + k3 * Complex64::new(2.0, 0.0) + k4) * Complex64::new(dt / 6.0, 0.0)
    }

    /// Noise-free part of the photocurrent, `c_x⟨S_x⟩ + c_y⟨S_y⟩ + background`.
    pub fn mean_current(&self, rho: &Operator) -> f64 {
        let sm = trace_product(&self.s_minus, rho);
        // ⟨S_x⟩ = 2 Re⟨S₋⟩, ⟨S_y⟩ = −2 Im⟨S₋⟩
        let c = &self.coefficients;
        c.c_x * 2.0 * sm.re - c.c_y * 2.0 * sm.im + c.background
    }

    pub fn coefficients(&self) -> PhotocurrentCoefficients {
        self.coefficients
    }
}

/// `−i[H, ρ] + Σ D[c_m]ρ`
pub fn drift(rho: &DensityMatrix, model: &EffectiveModel) -> Operator {
    Stepper::new(model).drift(rho.matrix())
}

/// `√η H[d_eff]ρ`
pub fn diffusion(rho: &DensityMatrix, model: &EffectiveModel) -> Operator {
    Stepper::new(model).diffusion(rho.matrix())
}

/// A single checked step at `cfg.dt`, renormalised when `cfg.renormalize`.
pub fn milstein_step(
    rho: &DensityMatrix,
    model: &EffectiveModel,
    cfg: &IntegratorConfig,
    dw: f64,
) -> Result<DensityMatrix> {
    let integrator = Integrator::new(model, cfg.scheme, cfg.dt)?;
    finish_step(integrator.advance(rho.matrix(), dw).out, cfg, 0, cfg.dt)
}

fn finish_step(out: StepOutput, cfg: &IntegratorConfig, step: usize, t: f64) -> Result<DensityMatrix> {
    // The Kraus form evolves the unnormalised state; only a non-positive or
    // non-finite trace is an error there.
    let deviation = match cfg.scheme {
        Scheme::Explicit => (out.trace - 1.0).abs(),
        Scheme::Kraus if out.trace > 0.0 && out.trace.is_finite() => 0.0,
        Scheme::Kraus => f64::INFINITY,
    };
    let renormalize = cfg.renormalize || cfg.scheme == Scheme::Kraus;
    if !(deviation <= TRACE_ABORT) {
        return Err(Error::TraceDrift {
            deviation,
            diagnostics: StepDiagnostics {
                step,
                time: t,
                trace: out.trace,
                min_eigenvalue: Some(operator_eigen_min(&out.rho)),
            },
        });
    }
    Ok(if renormalize {
        DensityMatrix(out.rho / Complex64::new(out.trace, 0.0))
    } else {
        DensityMatrix(out.rho)
    })
}

/// One simulated realisation.
#[derive(Debug, Clone)]
pub struct TrajectoryRecord {
    pub key: NoiseKey,
    pub dt: f64,
    /// Photocurrent per step, `I_k` on `[k·dt, (k+1)·dt)`, background included.
    pub current: Vec<f64>,
    /// Bare-cavity background contained in `current`.
    pub background: f64,
    /// `θ − θ_κ` of the measured quadrature.
    pub quadrature_phase: f64,
    pub gamma_p: f64,
    pub record_stride: usize,
    /// Sample times of `overlap` (every `record_stride` steps, starting at 0).
    pub times: Vec<f64>,
    pub overlap: Vec<f64>,
    pub final_state: DensityMatrix,
    pub noise_checksum: u64,
}

impl TrajectoryRecord {
    pub fn steps(&self) -> usize {
        self.current.len()
    }

    pub fn duration(&self) -> f64 {
        self.current.len() as f64 * self.dt
    }

    pub fn final_overlap(&self) -> f64 {
        self.final_state.singlet_overlap()
    }

    /// Overlap after `step` steps, when that step was sampled.
    pub fn overlap_at_step(&self, step: usize) -> Option<f64> {
        if step % self.record_stride != 0 {
            return None;
        }
        self.overlap.get(step / self.record_stride).copied()
    }

    /// Photocurrent with the bare-cavity background removed.
    pub fn centered_current(&self) -> impl Iterator<Item = f64> + '_ {
        self.current.iter().map(move |i| i - self.background)
    }
}

/// Integrates from `initial` over `cfg.t_final`, drawing increments from the
/// stream `(cfg.rng_master_seed, trajectory)`.
pub fn run_trajectory(
    model: &EffectiveModel,
    cfg: &IntegratorConfig,
    initial: &DensityMatrix,
    trajectory: u64,
) -> Result<TrajectoryRecord> {
    cfg.validate()?;
    let key = NoiseKey::new(cfg.rng_master_seed, trajectory);
    let integrator = Integrator::new(model, cfg.scheme, cfg.dt)?;
    let mut noise = WienerStream::new(key, cfg.dt);
    evolve(model, &integrator, cfg, initial, key, |_| noise.next_increment())
}

/// Integrates along a caller-supplied Brownian path (`increments.len()` steps).
pub fn run_with_increments(
    model: &EffectiveModel,
    cfg: &IntegratorConfig,
    initial: &DensityMatrix,
    increments: &[f64],
) -> Result<TrajectoryRecord> {
    let mut cfg = cfg.clone();
    cfg.t_final = cfg.dt * increments.len() as f64;
    cfg.validate()?;
    let integrator = Integrator::new(model, cfg.scheme, cfg.dt)?;
    let key = NoiseKey::new(cfg.rng_master_seed, u64::MAX);
    evolve(model, &integrator, &cfg, initial, key, |k| increments[k])
}

/// Integrates with a prepared [`Integrator`], reusing its precomputation
/// across trajectories.
pub fn run_trajectory_with(
    model: &EffectiveModel,
    integrator: &Integrator,
    cfg: &IntegratorConfig,
    initial: &DensityMatrix,
    trajectory: u64,
) -> Result<TrajectoryRecord> {
    cfg.validate()?;
    let key = NoiseKey::new(cfg.rng_master_seed, trajectory);
    let mut noise = WienerStream::new(key, cfg.dt);
    evolve(model, integrator, cfg, initial, key, |_| noise.next_increment())
}

fn evolve(
    model: &EffectiveModel,
    integrator: &Integrator,
    cfg: &IntegratorConfig,
    initial: &DensityMatrix,
    key: NoiseKey,
    mut increment: impl FnMut(usize) -> f64,
) -> Result<TrajectoryRecord> {
    let n = cfg.steps();
    let dt = cfg.dt;
    let stride = cfg.record_stride;
    let mut rho = *initial;
    let mut current = Vec::with_capacity(n);
    let mut times = Vec::with_capacity(n / stride + 1);
    let mut overlap = Vec::with_capacity(n / stride + 1);
    let mut checksum = Checksum::default();
    let background = model.derived.background_i;
    times.push(0.0);
    overlap.push(rho.singlet_overlap());

    let abort = |source: Error| Error::TrajectoryAborted {
        master_seed: key.master_seed,
        trajectory: key.trajectory,
        source: Box::new(source),
    };

    for k in 0..n {
        let dw = increment(k);
        checksum.push(dw);
        let step = integrator.advance(rho.matrix(), dw);
        current.push(background + step.record / dt);
        rho = finish_step(step.out, cfg, k + 1, (k + 1) as f64 * dt).map_err(abort)?;

        let done = k + 1;
        if cfg.positivity_check_stride > 0 && done % cfg.positivity_check_stride == 0 {
            let min = rho.min_eigenvalue();
            if min < POSITIVITY_FLOOR {
                return Err(abort(Error::PositivityViolation {
                    diagnostics: StepDiagnostics {
                        step: done,
                        time: done as f64 * dt,
                        trace: rho.trace(),
                        min_eigenvalue: Some(min),
                    },
                }));
            }
        }
        if done % stride == 0 {
            times.push(done as f64 * dt);
            overlap.push(rho.singlet_overlap());
        }
    }

    let d = &model.derived;
    Ok(TrajectoryRecord {
        key,
        dt,
        current,
        background: d.background_i,
        quadrature_phase: model.params.theta - d.theta_kappa,
        gamma_p: d.gamma_p,
        record_stride: stride,
        times,
        overlap,
        final_state: rho,
        noise_checksum: checksum.value(),
    })
}

/// Deterministic master-equation evolution (RK4), returning the state after
/// each of `n` steps.
pub fn evolve_unconditioned(model: &EffectiveModel, initial: &DensityMatrix, dt: f64, n: usize) -> Vec<DensityMatrix> {
    let stepper = Stepper::new(model);
    let mut rho = *initial.matrix();
    (0..n)
        .map(|_| {
            rho = stepper.rk4_step(&rho, dt);
            DensityMatrix::new_unchecked(rho)
        })
        .collect()
}
