// SPDX-License-Identifier: Apache-2.0

//! Acceptance statistics computed from a photocurrent record.
//!
//! All functions expect the bare-cavity background to be removed; the
//! record-level entry points do this through
//! [`TrajectoryRecord::centered_current`].

use std::f64::consts::{FRAC_1_SQRT_2, PI};
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sme::{DensityMatrix, TrajectoryRecord};

/// Demodulation frequency and time constant of the digital lock-in.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LockinConfig {
    pub omega: f64,
    pub tau: f64,
}

impl LockinConfig {
    pub fn new(omega: f64, tau: f64) -> Result<Self> {
        let cfg = Self { omega, tau };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "tau",
                reason: format!("lock-in time constant must be positive, got {}", self.tau),
            });
        }
        if !self.omega.is_finite() {
            return Err(Error::InvalidParameter {
                name: "omega",
                reason: format!("must be finite, got {}", self.omega),
            });
        }
        Ok(())
    }
}

/// Which signals to evaluate for a record.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct SignalRequest {
    pub mean_current: bool,
    pub weighted: bool,
    pub lockin: Option<LockinConfig>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct SignalResult {
    pub zeta_mean_current: Option<f64>,
    pub zeta_mean_current_weighted: Option<f64>,
    pub zeta_lockin: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpectrumKind {
    Periodogram,
    Analytic,
}

/// Spectrum sampled on a strictly increasing frequency grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumTable {
    pub frequencies: Vec<f64>,
    pub values: Vec<f64>,
    pub kind: SpectrumKind,
}

impl SpectrumTable {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// `(1/√T) Σ I_k dt`.
pub fn mean_current_signal(current: &[f64], dt: f64) -> f64 {
    let t = current.len() as f64 * dt;
    current.iter().sum::<f64>() * dt / t.sqrt()
}

/// `(1/√T) Σ (1 − e^{−γp t_k}) I_k dt`, weights taken at the step midpoints.
pub fn weighted_mean_current_signal(current: &[f64], dt: f64, gamma_p: f64) -> f64 {
    let t = current.len() as f64 * dt;
    let sum: f64 = current
        .iter()
        .enumerate()
        .map(|(k, i)| (1.0 - (-gamma_p * (k as f64 + 0.5) * dt).exp()) * i)
        .sum();
    sum * dt / t.sqrt()
}

/// Lock-in output: the filter `L ← L e^{−(iΩ + 1/τ)dt} + I_k dt` is advanced
/// exactly per step and `ζ = (2/(Tτ)) Σ |L_k|² dt`.
pub fn lockin_signal(current: &[f64], dt: f64, cfg: &LockinConfig) -> f64 {
    let t = current.len() as f64 * dt;
    let decay = Complex64::new(-dt / cfg.tau, -cfg.omega * dt).exp();
    let mut l = Complex64::new(0.0, 0.0);
    let mut acc = 0.0;
    for &i in current {
        l = l * decay + i * dt;
        acc += l.norm_sqr();
    }
    2.0 * acc * dt / (t * cfg.tau)
}

pub fn zeta_mean_current(record: &TrajectoryRecord) -> f64 {
    let centered: Vec<f64> = record.centered_current().collect();
    mean_current_signal(&centered, record.dt)
}

pub fn zeta_mean_current_weighted(record: &TrajectoryRecord) -> f64 {
    let centered: Vec<f64> = record.centered_current().collect();
    weighted_mean_current_signal(&centered, record.dt, record.gamma_p)
}

pub fn zeta_lockin(record: &TrajectoryRecord, cfg: &LockinConfig) -> f64 {
    let centered: Vec<f64> = record.centered_current().collect();
    lockin_signal(&centered, record.dt, cfg)
}

pub fn compute_signals(record: &TrajectoryRecord, request: &SignalRequest) -> SignalResult {
    let centered: Vec<f64> = record.centered_current().collect();
    let dt = record.dt;
    SignalResult {
        zeta_mean_current: request.mean_current.then(|| mean_current_signal(&centered, dt)),
        zeta_mean_current_weighted: request
            .weighted
            .then(|| weighted_mean_current_signal(&centered, dt, record.gamma_p)),
        zeta_lockin: request.lockin.map(|cfg| lockin_signal(&centered, dt, &cfg)),
    }
}

/// Reusable FFT plan for records of a fixed length.
#[derive(Clone)]
pub struct PeriodogramPlan {
    fft: Arc<dyn Fft<f64>>,
    n: usize,
}

impl std::fmt::Debug for PeriodogramPlan {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PeriodogramPlan").field("n", &self.n).finish()
    }
}

impl PeriodogramPlan {
    pub fn new(n: usize) -> Self {
        Self {
            fft: FftPlanner::new().plan_fft_forward(n),
            n,
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// `(dt/2πn)|Σ_j I_j e^{−iΔ_k t_j}|²` for every `k = 0…n−1`.
    pub fn all_bins(&self, current: &[f64], dt: f64) -> Result<Vec<f64>> {
        if current.len() != self.n {
            return Err(Error::InvalidParameter {
                name: "current",
                reason: format!("plan is for {} samples, got {}", self.n, current.len()),
            });
        }
        if self.n == 0 {
            return Err(Error::Empty("photocurrent record"));
        }
        let mut buf: Vec<Complex64> = current.iter().map(|&x| Complex64::new(x, 0.0)).collect();
        self.fft.process(&mut buf);
        let scale = dt / (2.0 * PI * self.n as f64);
        Ok(buf.iter().map(|z| z.norm_sqr() * scale).collect())
    }

    /// Periodogram on `Δ_k = 2πk/(n dt)`, `k = 0…n/2`.
    pub fn table(&self, current: &[f64], dt: f64) -> Result<SpectrumTable> {
        let mut values = self.all_bins(current, dt)?;
        values.truncate(self.n / 2 + 1);
        Ok(SpectrumTable {
            frequencies: periodogram_grid(self.n, dt),
            values,
            kind: SpectrumKind::Periodogram,
        })
    }
}

pub fn periodogram_grid(n: usize, dt: f64) -> Vec<f64> {
    let step = 2.0 * PI / (n as f64 * dt);
    (0..=n / 2).map(|k| k as f64 * step).collect()
}

pub fn periodogram_of(current: &[f64], dt: f64) -> Result<SpectrumTable> {
    PeriodogramPlan::new(current.len()).table(current, dt)
}

pub fn periodogram(record: &TrajectoryRecord) -> Result<SpectrumTable> {
    let centered: Vec<f64> = record.centered_current().collect();
    periodogram_of(&centered, record.dt)
}

/// Running mean and standard error of periodograms on a common grid.
#[derive(Debug, Clone)]
pub struct SpectrumAccumulator {
    frequencies: Vec<f64>,
    sum: Vec<f64>,
    sum_sq: Vec<f64>,
    count: usize,
}

impl SpectrumAccumulator {
    pub fn new(frequencies: Vec<f64>) -> Self {
        let n = frequencies.len();
        Self {
            frequencies,
            sum: vec![0.0; n],
            sum_sq: vec![0.0; n],
            count: 0,
        }
    }

    pub fn push(&mut self, table: &SpectrumTable) -> Result<()> {
        if table.values.len() != self.sum.len() {
            return Err(Error::InvalidParameter {
                name: "table",
                reason: format!("expected {} bins, got {}", self.sum.len(), table.values.len()),
            });
        }
        for ((s, q), v) in self.sum.iter_mut().zip(&mut self.sum_sq).zip(&table.values) {
            *s += v;
            *q += v * v;
        }
        self.count += 1;
        Ok(())
    }

    /// Combines two accumulators over the same grid.
    pub fn merge(&mut self, other: &Self) -> Result<()> {
        if other.sum.len() != self.sum.len() {
            return Err(Error::InvalidParameter {
                name: "accumulator",
                reason: "grids differ".into(),
            });
        }
        for k in 0..self.sum.len() {
            self.sum[k] += other.sum[k];
            self.sum_sq[k] += other.sum_sq[k];
        }
        self.count += other.count;
        Ok(())
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn mean(&self) -> SpectrumTable {
        let n = self.count.max(1) as f64;
        SpectrumTable {
            frequencies: self.frequencies.clone(),
            values: self.sum.iter().map(|s| s / n).collect(),
            kind: SpectrumKind::Periodogram,
        }
    }

    /// Standard error of each bin mean.
    pub fn standard_error(&self) -> Vec<f64> {
        let n = self.count as f64;
        if self.count < 2 {
            return vec![f64::INFINITY; self.sum.len()];
        }
        self.sum
            .iter()
            .zip(&self.sum_sq)
            .map(|(s, q)| {
                let mean = s / n;
                ((q / n - mean * mean).max(0.0) * n / (n - 1.0) / n).sqrt()
            })
            .collect()
    }
}

/// Post-selection rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Criterion {
    /// `⟨−|ρ|−⟩ ≥ f_min`.
    Optimal { f_min: f64 },
    /// `|ζ_meanI − center| ≤ threshold`.
    DcWindow { threshold: f64, center: f64 },
    /// `|ζ_meanI,w − center| ≤ threshold` on the time-weighted signal.
    WeightedDcWindow { threshold: f64, center: f64 },
    /// `ζ_lockin ≤ threshold`.
    Lockin { threshold: f64, lockin: LockinConfig },
}

impl Criterion {
    pub fn name(&self) -> &'static str {
        match self {
            Criterion::Optimal { .. } => "optimal",
            Criterion::DcWindow { .. } => "dc_window",
            Criterion::WeightedDcWindow { .. } => "weighted_dc_window",
            Criterion::Lockin { .. } => "lockin",
        }
    }

    /// Applies the rule to an already computed statistic (overlap for
    /// `Optimal`, the matching ζ otherwise).
    pub fn accepts(&self, value: f64) -> bool {
        match *self {
            Criterion::Optimal { f_min } => value >= f_min,
            Criterion::DcWindow { threshold, center } | Criterion::WeightedDcWindow { threshold, center } => {
                (value - center).abs() <= threshold
            }
            Criterion::Lockin { threshold, .. } => value <= threshold,
        }
    }

    /// Checks that a record of measured quadrature `phase = θ − θκ` carries the
    /// signal this rule looks at: DC windows need the `S_x` quadrature
    /// (`|sin phase|` dominant), the lock-in the `S_y` one.
    pub fn check_phase(&self, phase: f64) -> Result<()> {
        let (needs, ok) = match self {
            Criterion::Optimal { .. } => return Ok(()),
            Criterion::DcWindow { .. } | Criterion::WeightedDcWindow { .. } => {
                ("|sin(θ − θκ)| ≥ 1/√2", phase.sin().abs() >= FRAC_1_SQRT_2)
            }
            Criterion::Lockin { .. } => ("|cos(θ − θκ)| ≥ 1/√2", phase.cos().abs() >= FRAC_1_SQRT_2),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::CriterionMismatch {
                criterion: self.name(),
                reason: format!("record measured at θ − θκ = {phase:.4}, rule needs {needs}"),
            })
        }
    }

    /// The statistic this rule thresholds, evaluated on `record`.
    pub fn statistic(&self, record: &TrajectoryRecord) -> Result<f64> {
        self.check_phase(record.quadrature_phase)?;
        Ok(match self {
            Criterion::Optimal { .. } => record.final_overlap(),
            Criterion::DcWindow { .. } => zeta_mean_current(record),
            Criterion::WeightedDcWindow { .. } => zeta_mean_current_weighted(record),
            Criterion::Lockin { lockin, .. } => zeta_lockin(record, lockin),
        })
    }
}

pub fn accept(record: &TrajectoryRecord, criterion: &Criterion) -> Result<bool> {
    Ok(criterion.accepts(criterion.statistic(record)?))
}

/// State-based acceptance; only the optimal rule can look at `ρ` directly.
pub fn accept_state(rho: &DensityMatrix, criterion: &Criterion) -> Result<bool> {
    match criterion {
        Criterion::Optimal { f_min } => Ok(rho.singlet_overlap() >= *f_min),
        other => Err(Error::CriterionMismatch {
            criterion: other.name(),
            reason: "needs a photocurrent record, got a bare state".into(),
        }),
    }
}
