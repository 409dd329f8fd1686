// SPDX-License-Identifier: Apache-2.0

//! Monte Carlo ensembles, post-selection statistics and decoherence sweeps.
//!
//! Trajectories are processed in fixed chunks whose results are combined in
//! index order, so every output is bit-identical for any thread count.

use std::collections::BTreeMap;
use std::f64::consts::FRAC_1_SQRT_2;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Operator;
use crate::model::{build_effective_model, EffectiveModel, SystemParams};
use crate::signals::{Criterion, LockinConfig, PeriodogramPlan, SignalRequest, SignalResult, SpectrumAccumulator};
use crate::sme::{run_trajectory_with, DensityMatrix, Integrator, IntegratorConfig, Stepper, TrajectoryRecord};
use crate::spin::{basis_ket, singlet, st, to_singlet_triplet, EG, GE, GG};

const CHUNK: usize = 16;

/// Overlap at or above which a trajectory counts as singlet-collapsed.
pub const SINGLET_CLASS: f64 = 0.8;
/// Overlap at or below which a trajectory counts as triplet-collapsed.
pub const TRIPLET_CLASS: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitialState {
    /// `|eg⟩`.
    Eg,
    /// `(|g⟩ + |e⟩)(|g⟩ − |e⟩)/2`.
    Product,
    /// `|−⟩`.
    Singlet,
    /// Explicit density matrix in the basis `{ee, eg, ge, gg}`.
    Custom { re: [[f64; 4]; 4], im: [[f64; 4]; 4] },
}

impl Default for InitialState {
    fn default() -> Self {
        InitialState::Eg
    }
}

impl InitialState {
    pub fn density(&self) -> Result<DensityMatrix> {
        match self {
            InitialState::Eg => Ok(DensityMatrix::from_ket(&basis_ket(EG))),
            InitialState::Singlet => Ok(DensityMatrix::from_ket(&singlet())),
            InitialState::Product => {
                let half = Complex64::new(0.5, 0.0);
                let ket = (basis_ket(GG) - basis_ket(GE) + basis_ket(EG) - basis_ket(crate::spin::EE)) * half;
                Ok(DensityMatrix::from_ket(&ket))
            }
            InitialState::Custom { re, im } => {
                let m = Operator::from_fn(|r, c| Complex64::new(re[r][c], im[r][c]));
                let rho = DensityMatrix::new(m)?;
                if rho.min_eigenvalue() < -1e-9 {
                    return Err(Error::InvalidParameter {
                        name: "initial",
                        reason: "custom state is not positive semidefinite".into(),
                    });
                }
                Ok(rho)
            }
        }
    }
}

/// A post-selection rule whose threshold is fixed by a target success
/// probability.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Rule {
    Optimal,
    Dc { center: f64 },
    WeightedDc { center: f64 },
    Lockin { lockin: LockinConfig },
}

impl Rule {
    pub fn name(&self) -> &'static str {
        match self {
            Rule::Optimal => "optimal",
            Rule::Dc { .. } => "dc",
            Rule::WeightedDc { .. } => "weighted_dc",
            Rule::Lockin { .. } => "lockin",
        }
    }

    /// Ranking score; smaller is more singlet-like.
    pub fn score(&self, overlap: f64, signals: &SignalResult) -> Result<f64> {
        let missing = |what: &str| Error::CriterionMismatch {
            criterion: self.name(),
            reason: format!("{what} was not computed"),
        };
        Ok(match self {
            Rule::Optimal => -overlap,
            Rule::Dc { center } => (signals.zeta_mean_current.ok_or_else(|| missing("ζ_meanI"))? - center).abs(),
            Rule::WeightedDc { center } => (signals
                .zeta_mean_current_weighted
                .ok_or_else(|| missing("weighted ζ_meanI"))?
                - center)
                .abs(),
            Rule::Lockin { .. } => signals.zeta_lockin.ok_or_else(|| missing("ζ_lockin"))?,
        })
    }

    /// The acceptance criterion with the threshold that corresponds to `score`.
    pub fn criterion(&self, score: f64) -> Criterion {
        match *self {
            Rule::Optimal => Criterion::Optimal { f_min: -score },
            Rule::Dc { center } => Criterion::DcWindow {
                threshold: score,
                center,
            },
            Rule::WeightedDc { center } => Criterion::WeightedDcWindow {
                threshold: score,
                center,
            },
            Rule::Lockin { lockin } => Criterion::Lockin {
                threshold: score,
                lockin,
            },
        }
    }

    /// Threshold in the units of the criterion (overlap for `Optimal`).
    pub fn threshold(&self, score: f64) -> f64 {
        match self {
            Rule::Optimal => -score,
            _ => score,
        }
    }

    /// Signals this rule needs.
    pub fn request(&self) -> SignalRequest {
        match self {
            Rule::Optimal => SignalRequest::default(),
            Rule::Dc { .. } => SignalRequest {
                mean_current: true,
                ..Default::default()
            },
            Rule::WeightedDc { .. } => SignalRequest {
                weighted: true,
                ..Default::default()
            },
            Rule::Lockin { lockin } => SignalRequest {
                lockin: Some(*lockin),
                ..Default::default()
            },
        }
    }

    pub fn check_phase(&self, phase: f64) -> Result<()> {
        self.criterion(0.0).check_phase(phase)
    }
}

fn merge_requests(rules: &[Rule], extra: SignalRequest) -> Result<SignalRequest> {
    let mut out = extra;
    for r in rules {
        let q = r.request();
        out.mean_current |= q.mean_current;
        out.weighted |= q.weighted;
        if let Some(l) = q.lockin {
            match out.lockin {
                Some(existing) if existing != l => {
                    return Err(Error::InvalidParameter {
                        name: "rules",
                        reason: "at most one lock-in configuration per ensemble".into(),
                    })
                }
                _ => out.lockin = Some(l),
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleConfig {
    pub n_trajectories: usize,
    #[serde(default)]
    pub initial: InitialState,
    pub params: SystemParams,
    pub integrator: IntegratorConfig,
    #[serde(default)]
    pub signals: SignalRequest,
    #[serde(default)]
    pub rules: Vec<Rule>,
    #[serde(default)]
    pub success_targets: Vec<f64>,
    /// Accumulate singlet- and triplet-conditioned periodograms.
    #[serde(default)]
    pub spectra: bool,
    /// Keep each trajectory's photocurrent, averaged over the sampling intervals.
    #[serde(default)]
    pub keep_currents: bool,
    /// Worker threads; `None` uses the global pool.
    #[serde(default)]
    pub threads: Option<usize>,
}

impl EnsembleConfig {
    pub fn new(params: SystemParams, integrator: IntegratorConfig, n_trajectories: usize) -> Self {
        Self {
            n_trajectories,
            initial: InitialState::Eg,
            params,
            integrator,
            signals: SignalRequest::default(),
            rules: Vec::new(),
            success_targets: Vec::new(),
            spectra: false,
            keep_currents: false,
            threads: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_trajectories < 2 {
            return Err(Error::InvalidParameter {
                name: "n_trajectories",
                reason: format!("need at least 2, got {}", self.n_trajectories),
            });
        }
        self.params.validate()?;
        self.integrator.validate()?;
        for &t in &self.success_targets {
            if !(t > 0.0 && t <= 1.0) {
                return Err(Error::TargetUnreachable { target: t });
            }
        }
        if let Some(l) = &self.signals.lockin {
            l.validate()?;
        }
        if self.threads == Some(0) {
            return Err(Error::InvalidParameter {
                name: "threads",
                reason: "must be positive".into(),
            });
        }
        self.initial.density().map(|_| ())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySummary {
    pub trajectory: u64,
    pub final_overlap: f64,
    /// Overlap at the ensemble's sample times.
    pub overlap: Vec<f64>,
    pub signals: SignalResult,
    pub noise_checksum: u64,
    /// Mean photocurrent on each sampling interval, when kept.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub current: Option<Vec<f64>>,
    /// Acceptance per `rule@target` key.
    pub accepted: BTreeMap<String, bool>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub threshold: f64,
    pub psuccess: f64,
    pub fidelity: f64,
    pub n_accept: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleSummary {
    pub rule: Rule,
    pub target: f64,
    pub selection: Selection,
}

impl RuleSummary {
    pub fn key(&self) -> String {
        acceptance_key(&self.rule, self.target)
    }
}

pub fn acceptance_key(rule: &Rule, target: f64) -> String {
    format!("{}@{}", rule.name(), target)
}

/// Singlet- and triplet-conditioned periodogram averages.
#[derive(Debug, Clone)]
pub struct ConditionedSpectra {
    pub singlet: SpectrumAccumulator,
    pub triplet: SpectrumAccumulator,
    pub all: SpectrumAccumulator,
}

impl ConditionedSpectra {
    fn new(grid: Vec<f64>) -> Self {
        Self {
            singlet: SpectrumAccumulator::new(grid.clone()),
            triplet: SpectrumAccumulator::new(grid.clone()),
            all: SpectrumAccumulator::new(grid),
        }
    }

    fn merge(&mut self, other: &Self) -> Result<()> {
        self.singlet.merge(&other.singlet)?;
        self.triplet.merge(&other.triplet)?;
        self.all.merge(&other.all)
    }
}

#[derive(Debug, Clone)]
pub struct EnsembleSummary {
    pub master_seed: u64,
    /// Sample times of the per-trajectory overlaps.
    pub times: Vec<f64>,
    pub trajectories: Vec<TrajectorySummary>,
    pub rules: Vec<RuleSummary>,
    pub spectra: Option<ConditionedSpectra>,
}

impl EnsembleSummary {
    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn final_overlaps(&self) -> Vec<f64> {
        self.trajectories.iter().map(|t| t.final_overlap).collect()
    }

    /// Mean overlap at each sample time.
    pub fn mean_overlap(&self) -> Vec<f64> {
        let n = self.trajectories.len() as f64;
        (0..self.times.len())
            .map(|k| self.trajectories.iter().map(|t| t.overlap[k]).sum::<f64>() / n)
            .collect()
    }

    /// Index of the sample at time `t`.
    pub fn time_index(&self, t: f64) -> Option<usize> {
        let dt = if self.times.len() > 1 {
            self.times[1] - self.times[0]
        } else {
            1.0
        };
        self.times.iter().position(|&s| (s - t).abs() < 1e-6 * dt.max(1e-12))
    }

    /// Histogram of the overlap at sample `k` over `bins` equal bins of [0, 1].
    pub fn overlap_histogram(&self, k: usize, bins: usize) -> Vec<usize> {
        let mut counts = vec![0; bins];
        for t in &self.trajectories {
            let b = ((t.overlap[k] * bins as f64) as usize).min(bins - 1);
            counts[b] += 1;
        }
        counts
    }

    /// Fraction of trajectories whose overlap at sample `k` lies strictly in `(lo, hi)`.
    pub fn undecided_fraction(&self, k: usize, lo: f64, hi: f64) -> f64 {
        let n = self
            .trajectories
            .iter()
            .filter(|t| t.overlap[k] > lo && t.overlap[k] < hi)
            .count();
        n as f64 / self.trajectories.len() as f64
    }

    /// Scores of `rule` for all trajectories.
    pub fn scores(&self, rule: &Rule) -> Result<Vec<f64>> {
        self.trajectories
            .iter()
            .map(|t| rule.score(t.final_overlap, &t.signals))
            .collect()
    }

    pub fn select(&self, rule: &Rule, target: f64) -> Result<Selection> {
        select_by_score(&self.scores(rule)?, &self.final_overlaps(), target, rule)
    }

    pub fn curve(&self, rule: &Rule) -> Result<Vec<CurvePoint>> {
        fidelity_vs_success_curve(&self.scores(rule)?, &self.final_overlaps(), rule)
    }
}

struct Chunk {
    trajectories: Vec<TrajectorySummary>,
    spectra: Option<ConditionedSpectra>,
}

fn compute_signals(record: &TrajectoryRecord, request: &SignalRequest) -> SignalResult {
    crate::signals::compute_signals(record, request)
}

/// Runs `cfg.n_trajectories` trajectories and evaluates the requested signals
/// and rules.
pub fn run_ensemble(cfg: &EnsembleConfig) -> Result<EnsembleSummary> {
    cfg.validate()?;
    let model = build_effective_model(&cfg.params)?;
    let request = merge_requests(&cfg.rules, cfg.signals)?;
    let phase = cfg.params.theta - model.derived.theta_kappa;
    for rule in &cfg.rules {
        rule.check_phase(phase)?;
    }
    let integrator = Integrator::new(&model, cfg.integrator.scheme, cfg.integrator.dt)?;
    let rho0 = cfg.initial.density()?;
    let n_steps = cfg.integrator.steps();
    let plan = cfg.spectra.then(|| PeriodogramPlan::new(n_steps));
    let grid = crate::signals::periodogram_grid(n_steps, cfg.integrator.dt);

    let run_chunk = |c: usize| -> Result<Chunk> {
        let start = c * CHUNK;
        let end = ((c + 1) * CHUNK).min(cfg.n_trajectories);
        let mut spectra = plan.as_ref().map(|_| ConditionedSpectra::new(grid.clone()));
        let mut out = Vec::with_capacity(end - start);
        for traj in start..end {
            let rec = run_trajectory_with(&model, &integrator, &cfg.integrator, &rho0, traj as u64)?;
            let final_overlap = rec.final_overlap();
            if let (Some(plan), Some(sp)) = (&plan, spectra.as_mut()) {
                let centered: Vec<f64> = rec.centered_current().collect();
                let table = plan.table(&centered, rec.dt)?;
                sp.all.push(&table)?;
                if final_overlap >= SINGLET_CLASS {
                    sp.singlet.push(&table)?;
                } else if final_overlap <= TRIPLET_CLASS {
                    sp.triplet.push(&table)?;
                }
            }
            out.push(TrajectorySummary {
                trajectory: traj as u64,
                final_overlap,
                signals: compute_signals(&rec, &request),
                noise_checksum: rec.noise_checksum,
                current: cfg
                    .keep_currents
                    .then(|| binned_current(&rec.current, rec.record_stride)),
                overlap: rec.overlap,
                accepted: BTreeMap::new(),
            });
        }
        Ok(Chunk {
            trajectories: out,
            spectra,
        })
    };

    let n_chunks = cfg.n_trajectories.div_ceil(CHUNK);
    let chunks: Vec<Result<Chunk>> = in_pool(cfg.threads, || (0..n_chunks).into_par_iter().map(run_chunk).collect())?;

    let mut trajectories = Vec::with_capacity(cfg.n_trajectories);
    let mut spectra = plan.as_ref().map(|_| ConditionedSpectra::new(grid.clone()));
    for chunk in chunks {
        let chunk = chunk?;
        trajectories.extend(chunk.trajectories);
        if let (Some(total), Some(part)) = (spectra.as_mut(), chunk.spectra.as_ref()) {
            total.merge(part)?;
        }
    }

    let stride = cfg.integrator.record_stride;
    let times = (0..=n_steps / stride)
        .map(|k| (k * stride) as f64 * cfg.integrator.dt)
        .collect();
    let mut summary = EnsembleSummary {
        master_seed: cfg.integrator.rng_master_seed,
        times,
        trajectories,
        rules: Vec::new(),
        spectra,
    };
    let overlaps = summary.final_overlaps();
    for rule in &cfg.rules {
        let scores = summary.scores(rule)?;
        for &target in &cfg.success_targets {
            let selection = select_by_score(&scores, &overlaps, target, rule)?;
            let key = acceptance_key(rule, target);
            let cut = score_of_threshold(rule, selection.threshold);
            for (t, s) in summary.trajectories.iter_mut().zip(&scores) {
                t.accepted.insert(key.clone(), *s <= cut);
            }
            summary.rules.push(RuleSummary {
                rule: *rule,
                target,
                selection,
            });
        }
    }
    Ok(summary)
}

/// Photocurrent averaged over each sampling interval `[t_k, t_{k+1})`.
pub fn binned_current(current: &[f64], stride: usize) -> Vec<f64> {
    current
        .chunks(stride.max(1))
        .map(|c| c.iter().sum::<f64>() / c.len() as f64)
        .collect()
}

fn score_of_threshold(rule: &Rule, threshold: f64) -> f64 {
    match rule {
        Rule::Optimal => -threshold,
        _ => threshold,
    }
}

fn in_pool<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match threads {
        None => Ok(f()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::InvalidParameter {
                    name: "threads",
                    reason: e.to_string(),
                })?;
            Ok(pool.install(f))
        }
    }
}

/// Accepts the `round(target·N)` best-scoring candidates (at least one) and
/// reports the resulting threshold, success probability and fidelity. Ties
/// at the threshold are all accepted.
pub fn select_by_score(scores: &[f64], overlaps: &[f64], target: f64, rule: &Rule) -> Result<Selection> {
    if scores.is_empty() || scores.len() != overlaps.len() {
        return Err(Error::Empty("scores"));
    }
    if !(target > 0.0 && target <= 1.0) {
        return Err(Error::TargetUnreachable { target });
    }
    let n = scores.len();
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    let k = ((target * n as f64).round() as usize).clamp(1, n);
    let cut = sorted[k - 1];
    let (mut n_accept, mut sum) = (0usize, 0.0);
    for (s, o) in scores.iter().zip(overlaps) {
        if *s <= cut {
            n_accept += 1;
            sum += o;
        }
    }
    Ok(Selection {
        threshold: rule.threshold(cut),
        psuccess: n_accept as f64 / n as f64,
        fidelity: sum / n_accept as f64,
        n_accept,
    })
}

/// Quantile threshold on `|ζ − center|` reaching `target` success, and the
/// fidelity of the accepted set.
pub fn threshold_for_success(signals: &[f64], overlaps: &[f64], target: f64, center: f64) -> Result<(f64, f64)> {
    let scores: Vec<f64> = signals.iter().map(|z| (z - center).abs()).collect();
    let s = select_by_score(&scores, overlaps, target, &Rule::Dc { center })?;
    Ok((s.threshold, s.fidelity))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub psuccess: f64,
    pub threshold: f64,
    pub fidelity: f64,
    /// Fidelity reachable if singlet and triplet signals never overlapped.
    pub bound: f64,
}

/// Fidelity as a function of success probability, sweeping the threshold
/// through every distinct score.
pub fn fidelity_vs_success_curve(scores: &[f64], overlaps: &[f64], rule: &Rule) -> Result<Vec<CurvePoint>> {
    if scores.is_empty() || scores.len() != overlaps.len() {
        return Err(Error::Empty("scores"));
    }
    let n = scores.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));
    let mass = overlaps.iter().sum::<f64>() / n as f64;
    let mut out = Vec::new();
    let mut sum = 0.0;
    for (j, &i) in order.iter().enumerate() {
        sum += overlaps[i];
        if j + 1 < n && scores[order[j + 1]] == scores[i] {
            continue;
        }
        let p = (j + 1) as f64 / n as f64;
        out.push(CurvePoint {
            psuccess: p,
            threshold: rule.threshold(scores[i]),
            fidelity: sum / (j + 1) as f64,
            bound: (mass / p).min(1.0),
        });
    }
    Ok(out)
}

/// Signals of one record evaluated on its prefixes `[0, n_k·dt)`.
pub fn prefix_signals(
    current: &[f64],
    dt: f64,
    gamma_p: f64,
    request: &SignalRequest,
    ends: &[usize],
) -> Vec<SignalResult> {
    let mut out = Vec::with_capacity(ends.len());
    let (mut plain, mut weighted, mut lock) = (0.0, 0.0, 0.0);
    let mut l = Complex64::new(0.0, 0.0);
    let decay = request.lockin.map(|c| Complex64::new(-dt / c.tau, -c.omega * dt).exp());
    let mut next = 0;
    for (k, &i) in current.iter().enumerate() {
        if next >= ends.len() {
            break;
        }
        plain += i;
        weighted += (1.0 - (-gamma_p * (k as f64 + 0.5) * dt).exp()) * i;
        if let Some(d) = decay {
            l = l * d + i * dt;
            lock += l.norm_sqr();
        }
        while next < ends.len() && ends[next] == k + 1 {
            let t = (k + 1) as f64 * dt;
            out.push(SignalResult {
                zeta_mean_current: request.mean_current.then(|| plain * dt / t.sqrt()),
                zeta_mean_current_weighted: request.weighted.then(|| weighted * dt / t.sqrt()),
                zeta_lockin: request.lockin.map(|c| 2.0 * lock * dt / (t * c.tau)),
            });
            next += 1;
        }
    }
    out
}

/// Decoherence or inhomogeneity parameter varied by a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecoherenceAxis {
    /// `γ∥`.
    GammaPar,
    /// `1/τ`.
    Dephasing,
    /// `δχ`.
    DeltaChi,
    /// `δω_q`.
    DeltaOmegaQ,
}

impl DecoherenceAxis {
    pub fn name(&self) -> &'static str {
        match self {
            DecoherenceAxis::GammaPar => "gamma_par",
            DecoherenceAxis::Dephasing => "dephasing",
            DecoherenceAxis::DeltaChi => "delta_chi",
            DecoherenceAxis::DeltaOmegaQ => "delta_omega_q",
        }
    }

    pub fn apply(&self, base: &SystemParams, value: f64) -> Result<SystemParams> {
        if !(value > 0.0 && value.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "value",
                reason: format!("sweep values must be positive, got {value}"),
            });
        }
        let mut p = *base;
        match self {
            DecoherenceAxis::GammaPar => p.gamma_par = value,
            DecoherenceAxis::Dephasing => p.tau_phase = 1.0 / value,
            DecoherenceAxis::DeltaChi => return base.with_rabi_inhomogeneity(value),
            DecoherenceAxis::DeltaOmegaQ => p.delta_omega_q = value,
        }
        p.validate()?;
        Ok(p)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub base: EnsembleConfig,
    pub axis: DecoherenceAxis,
    pub values: Vec<f64>,
    pub targets: Vec<f64>,
    /// Integration times; `base.integrator.dt` must divide each of them.
    pub t_grid: Vec<f64>,
    pub rules: Vec<Rule>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub axis: DecoherenceAxis,
    pub value: f64,
    pub t: f64,
    pub target: f64,
    pub rule: Rule,
    pub selection: Selection,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepOptimum {
    pub axis: DecoherenceAxis,
    pub value: f64,
    pub target: f64,
    pub rule: Rule,
    pub t_opt: f64,
    pub fidelity: f64,
}

/// Default integration-time grid of the optimum search.
pub const DEFAULT_T_GRID: [f64; 6] = [1.0, 2.0, 5.0, 10.0, 20.0, 50.0];

/// Rows for a single sweep value: one ensemble integrated to `max(t_grid)`,
/// analysed on every prefix.
pub fn sweep_point(cfg: &SweepConfig, value: f64) -> Result<Vec<SweepRow>> {
    let params = cfg.axis.apply(&cfg.base.params, value)?;
    let model = build_effective_model(&params)?;
    let dt = cfg.base.integrator.dt;
    if cfg.t_grid.is_empty() {
        return Err(Error::Empty("t_grid"));
    }
    let mut ends = Vec::new();
    for &t in &cfg.t_grid {
        let n = (t / dt).round() as usize;
        if n == 0 || ((n as f64) * dt - t).abs() > 1e-9 * t {
            return Err(Error::InvalidParameter {
                name: "t_grid",
                reason: format!("T = {t} is not a multiple of dt = {dt}"),
            });
        }
        ends.push(n);
    }
    let mut sorted_ends = ends.clone();
    sorted_ends.sort_unstable();
    sorted_ends.dedup();
    let t_max = *sorted_ends.last().expect("nonempty") as f64 * dt;
    let mut icfg = cfg.base.integrator.clone();
    icfg.t_final = t_max;
    icfg.record_stride = sorted_ends.iter().fold(0, |g, &n| gcd(g, n));
    let phase = params.theta - model.derived.theta_kappa;
    for rule in &cfg.rules {
        rule.check_phase(phase)?;
    }
    let request = merge_requests(&cfg.rules, SignalRequest::default())?;
    let integrator = Integrator::new(&model, icfg.scheme, icfg.dt)?;
    let rho0 = cfg.base.initial.density()?;
    let n = cfg.base.n_trajectories;

    // per trajectory: (overlap, signals) at each prefix end
    type Point = Vec<(f64, SignalResult)>;
    let run_chunk = |c: usize| -> Result<Vec<Point>> {
        let mut out = Vec::new();
        for traj in c * CHUNK..((c + 1) * CHUNK).min(n) {
            let rec = run_trajectory_with(&model, &integrator, &icfg, &rho0, traj as u64)?;
            let centered: Vec<f64> = rec.centered_current().collect();
            let sig = prefix_signals(&centered, dt, rec.gamma_p, &request, &sorted_ends);
            out.push(
                sorted_ends
                    .iter()
                    .zip(sig)
                    .map(|(&e, s)| (rec.overlap_at_step(e).expect("stride divides every end"), s))
                    .collect(),
            );
        }
        Ok(out)
    };
    let chunks: Vec<Result<Vec<Point>>> = in_pool(cfg.base.threads, || {
        (0..n.div_ceil(CHUNK)).into_par_iter().map(run_chunk).collect()
    })?;
    let mut points: Vec<Point> = Vec::with_capacity(n);
    for c in chunks {
        points.extend(c?);
    }

    let mut rows = Vec::new();
    for &t in &cfg.t_grid {
        let e = (t / dt).round() as usize;
        let j = sorted_ends.binary_search(&e).expect("present");
        let overlaps: Vec<f64> = points.iter().map(|p| p[j].0).collect();
        for rule in &cfg.rules {
            let scores: Vec<f64> = points
                .iter()
                .map(|p| rule.score(p[j].0, &p[j].1))
                .collect::<Result<_>>()?;
            for &target in &cfg.targets {
                rows.push(SweepRow {
                    axis: cfg.axis,
                    value,
                    t,
                    target,
                    rule: *rule,
                    selection: select_by_score(&scores, &overlaps, target, rule)?,
                });
            }
        }
    }
    Ok(rows)
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Runs every sweep value and reports the rows and the optimum over `T`.
pub fn sweep_decoherence(cfg: &SweepConfig) -> Result<(Vec<SweepRow>, Vec<SweepOptimum>)> {
    if cfg.values.is_empty() {
        return Err(Error::Empty("sweep values"));
    }
    let mut rows = Vec::new();
    for &v in &cfg.values {
        rows.extend(sweep_point(cfg, v)?);
    }
    let optima = optimize_over_time(&rows);
    Ok((rows, optima))
}

/// Best fidelity over `T` for each (value, target, rule), refined by a
/// parabola in `log T` through the best grid point and its neighbours.
pub fn optimize_over_time(rows: &[SweepRow]) -> Vec<SweepOptimum> {
    let mut groups: Vec<(f64, f64, Rule, Vec<(f64, f64)>)> = Vec::new();
    for r in rows {
        match groups
            .iter_mut()
            .find(|g| g.0 == r.value && g.1 == r.target && g.2 == r.rule)
        {
            Some(g) => g.3.push((r.t, r.selection.fidelity)),
            None => groups.push((r.value, r.target, r.rule, vec![(r.t, r.selection.fidelity)])),
        }
    }
    let axis = rows.first().map(|r| r.axis).unwrap_or(DecoherenceAxis::GammaPar);
    groups
        .into_iter()
        .map(|(value, target, rule, mut pts)| {
            pts.sort_by(|a, b| a.0.total_cmp(&b.0));
            let (t_opt, fidelity) = parabolic_peak(&pts);
            SweepOptimum {
                axis,
                value,
                target,
                rule,
                t_opt,
                fidelity,
            }
        })
        .collect()
}

/// Maximum of `f(T)` sampled at increasing `T`, refined in `log T`.
pub fn parabolic_peak(pts: &[(f64, f64)]) -> (f64, f64) {
    let k = (0..pts.len())
        .max_by(|&a, &b| pts[a].1.total_cmp(&pts[b].1))
        .expect("nonempty");
    if k == 0 || k + 1 == pts.len() {
        return pts[k];
    }
    let (x0, x1, x2) = (pts[k - 1].0.ln(), pts[k].0.ln(), pts[k + 1].0.ln());
    let (y0, y1, y2) = (pts[k - 1].1, pts[k].1, pts[k + 1].1);
    // Lagrange parabola through three unevenly spaced points
    let d01 = (y1 - y0) / (x1 - x0);
    let d12 = (y2 - y1) / (x2 - x1);
    let a = (d12 - d01) / (x2 - x0);
    if a >= 0.0 {
        return pts[k];
    }
    let b = d01 - a * (x0 + x1);
    let xv = (-b / (2.0 * a)).clamp(x0, x2);
    let yv = y0 + d01 * (xv - x0) + a * (xv - x0) * (xv - x1);
    (xv.exp(), yv.max(y1).min(1.0))
}

/// Rate of change of `ρ₋₋` in the absence of measurement, written out term by
/// term in the singlet-triplet basis.
pub fn singlet_population_rate(params: &SystemParams, delta_chi: f64, rho: &Operator) -> f64 {
    let r = to_singlet_triplet(rho);
    let (m, p, ee, gg) = (st::MINUS, st::PLUS, st::EE, st::GG);
    let inv_tau = if params.tau_phase.is_finite() {
        1.0 / params.tau_phase
    } else {
        0.0
    };
    let i = Complex64::new(0.0, 1.0);
    let mut rate =
        -(inv_tau + params.gamma_par) * r[(m, m)].re + inv_tau * r[(p, p)].re + params.gamma_par * r[(ee, ee)].re;
    rate += (-i * params.delta_omega_q / 2.0 * (r[(p, m)] - r[(m, p)])).re;
    let coherence = (r[(gg, m)] - r[(ee, m)]) * FRAC_1_SQRT_2 - (r[(m, gg)] - r[(m, ee)]) * FRAC_1_SQRT_2;
    rate += (-i * delta_chi / 2.0 * coherence).re;
    rate
}

/// Evolves `initial` without measurement and returns the largest deviation
/// between `dρ₋₋/dt` from the full generator and from
/// [`singlet_population_rate`], together with the trace of `ρ₋₋`.
pub fn deterministic_ode_check(
    model: &EffectiveModel,
    initial: &DensityMatrix,
    dt: f64,
    steps: usize,
) -> (f64, Vec<f64>) {
    let mut params = model.params;
    params.eta = 0.0;
    let stepper = Stepper::new(model);
    let delta_chi = model.derived.delta_chi.re;
    let mut rho = *initial.matrix();
    let mut residual: f64 = 0.0;
    let mut populations = Vec::with_capacity(steps + 1);
    for k in 0..=steps {
        let drift = stepper.drift(&rho);
        let lhs = crate::spin::singlet_overlap(&drift);
        let rhs = singlet_population_rate(&params, delta_chi, &rho);
        residual = residual.max((lhs - rhs).abs());
        populations.push(crate::spin::singlet_overlap(&rho));
        if k < steps {
            rho = stepper.rk4_step(&rho, dt);
        }
    }
    (residual, populations)
}

/// Same time base for `IntegratorConfig`s whose horizons must be exact
/// multiples of `dt`: the largest `1/m ≤ max_dt`.
pub fn commensurate_dt(max_dt: f64) -> f64 {
    1.0 / (1.0 / max_dt).ceil()
}

pub fn integrator_for(model: &EffectiveModel, t_final: f64, seed: u64, samples: usize) -> IntegratorConfig {
    let dt = commensurate_dt(crate::sme::default_dt(model));
    let mut cfg = IntegratorConfig::with_dt(dt, t_final, seed);
    let steps = cfg.steps();
    cfg.record_stride = (steps / samples.max(1)).max(1);
    while steps % cfg.record_stride != 0 {
        cfg.record_stride -= 1;
    }
    cfg
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signals::{lockin_signal, mean_current_signal, weighted_mean_current_signal};
    use std::f64::consts::FRAC_PI_2;

    fn dc_params() -> SystemParams {
        SystemParams::bad_cavity(16.5, 10.0, -FRAC_PI_2)
    }

    #[test]
    fn initial_states_have_half_singlet_weight() {
        for s in [InitialState::Eg, InitialState::Product] {
            let rho = s.density().unwrap();
            assert!((rho.singlet_overlap() - 0.5).abs() < 1e-14);
            assert!((rho.trace() - 1.0).abs() < 1e-14);
        }
        assert!((InitialState::Singlet.density().unwrap().singlet_overlap() - 1.0).abs() < 1e-14);
        let mut re = [[0.0; 4]; 4];
        re[3][3] = 1.0;
        let custom = InitialState::Custom { re, im: [[0.0; 4]; 4] };
        assert!(custom.density().unwrap().singlet_overlap().abs() < 1e-15);
        re[3][3] = 2.0;
        assert!(InitialState::Custom { re, im: [[0.0; 4]; 4] }.density().is_err());
    }

    #[test]
    fn selection_definitions_on_hand_built_sets() {
        let scores = [0.1, 0.5, 0.2, 0.9, 0.3];
        let overlaps = [1.0, 0.0, 0.8, 0.1, 0.6];
        let rule = Rule::Dc { center: 0.0 };
        let s = select_by_score(&scores, &overlaps, 0.6, &rule).unwrap();
        assert_eq!(s.n_accept, 3);
        assert!((s.psuccess - 0.6).abs() < 1e-15);
        assert!((s.fidelity - (1.0 + 0.8 + 0.6) / 3.0).abs() < 1e-15);
        assert_eq!(s.threshold, 0.3);
        let all = select_by_score(&scores, &overlaps, 1.0, &rule).unwrap();
        assert!((all.fidelity - 2.5 / 5.0).abs() < 1e-15);
        assert_eq!(all.threshold, 0.9);
        let one = select_by_score(&scores, &overlaps, 1e-9, &rule).unwrap();
        assert_eq!((one.n_accept, one.fidelity), (1, 1.0));
        assert!(matches!(
            select_by_score(&scores, &overlaps, 1.2, &rule),
            Err(Error::TargetUnreachable { .. })
        ));
    }

    #[test]
    fn optimal_rule_threshold_is_an_overlap() {
        let overlaps = [0.95, 0.1, 0.7, 0.3];
        let scores: Vec<f64> = overlaps.iter().map(|o| -o).collect();
        let s = select_by_score(&scores, &overlaps, 0.5, &Rule::Optimal).unwrap();
        assert_eq!(s.threshold, 0.7);
        assert!((s.fidelity - 0.825).abs() < 1e-15);
        assert!(Rule::Optimal.criterion(-0.7).accepts(0.7));
    }

    #[test]
    fn windowed_threshold_uses_distance_from_center() {
        let zeta = [-2.5, 0.4, 1.1, -0.3];
        let overlaps = [0.0, 1.0, 0.9, 0.8];
        let (thr, f) = threshold_for_success(&zeta, &overlaps, 0.5, 0.5).unwrap();
        assert!((thr - 0.6).abs() < 1e-15);
        assert!((f - 0.95).abs() < 1e-15);
    }

    #[test]
    fn curve_and_bound() {
        let scores = [0.1, 0.2, 0.3, 0.4];
        let overlaps = [1.0, 1.0, 0.0, 0.0];
        let curve = fidelity_vs_success_curve(
            &scores,
            &overlaps,
            &Rule::Lockin {
                lockin: LockinConfig::new(1.0, 1.0).unwrap(),
            },
        )
        .unwrap();
        assert_eq!(curve.len(), 4);
        assert_eq!(curve[1].fidelity, 1.0);
        assert_eq!(curve[3].fidelity, 0.5);
        assert_eq!(curve[1].bound, 1.0);
        assert!((curve[2].bound - 0.5 / 0.75).abs() < 1e-15);
        for w in curve.windows(2).skip(1) {
            assert!(w[1].fidelity <= w[0].fidelity + 1e-15);
        }
    }

    #[test]
    fn prefix_signals_match_full_evaluation() {
        let dt = 0.01;
        let current: Vec<f64> = (0..1000).map(|k| ((k * 37 % 101) as f64 - 50.0) / 13.0).collect();
        let request = SignalRequest {
            mean_current: true,
            weighted: true,
            lockin: Some(LockinConfig::new(3.0, 0.7).unwrap()),
        };
        let ends = [200, 500, 1000];
        let pre = prefix_signals(&current, dt, 1.0, &request, &ends);
        for (e, s) in ends.iter().zip(pre) {
            let c = &current[..*e];
            assert!((s.zeta_mean_current.unwrap() - mean_current_signal(c, dt)).abs() < 1e-12);
            assert!((s.zeta_mean_current_weighted.unwrap() - weighted_mean_current_signal(c, dt, 1.0)).abs() < 1e-12);
            assert!((s.zeta_lockin.unwrap() - lockin_signal(c, dt, &request.lockin.unwrap())).abs() < 1e-12);
        }
    }

    #[test]
    fn parabolic_refinement() {
        let f = |t: f64| 0.9 - 0.01 * (t.ln() - 7f64.ln()).powi(2);
        let pts: Vec<(f64, f64)> = DEFAULT_T_GRID.iter().map(|&t| (t, f(t))).collect();
        let (t, v) = parabolic_peak(&pts);
        assert!((t - 7.0).abs() < 1e-9 && (v - 0.9).abs() < 1e-12);
        let edge = [(1.0, 0.1), (2.0, 0.2)];
        assert_eq!(parabolic_peak(&edge), (2.0, 0.2));
        let saturated = [(10.0, 0.99), (20.0, 1.0), (50.0, 0.995)];
        assert!(parabolic_peak(&saturated).1 <= 1.0);
    }

    #[test]
    fn ode_residual_vanishes_for_every_channel() {
        let base = dc_params();
        let variants = [
            base,
            SystemParams {
                gamma_par: 0.02,
                ..base
            },
            SystemParams {
                tau_phase: 30.0,
                ..base
            },
            SystemParams {
                delta_omega_q: 0.3,
                ..base
            },
            base.with_rabi_inhomogeneity(0.4).unwrap(),
            SystemParams {
                gamma_par: 0.01,
                tau_phase: 50.0,
                delta_omega_q: 0.2,
                ..base.with_rabi_inhomogeneity(0.1).unwrap()
            },
        ];
        for p in variants {
            let model = build_effective_model(&p).unwrap();
            for init in [InitialState::Eg, InitialState::Product] {
                let (res, _) = deterministic_ode_check(&model, &init.density().unwrap(), 1e-3, 500);
                assert!(res < 1e-10, "{res}");
            }
        }
    }

    #[test]
    fn ode_limits() {
        let base = dc_params();
        let singlet_state = InitialState::Singlet.density().unwrap();
        let (_, pops) = deterministic_ode_check(&build_effective_model(&base).unwrap(), &singlet_state, 1e-2, 100);
        assert!(pops.iter().all(|p| (p - 1.0).abs() < 1e-12));

        let p = SystemParams {
            gamma_par: 0.01,
            ..base
        };
        let rate = singlet_population_rate(&p, 0.0, singlet_state.matrix());
        assert!((rate + 0.01).abs() < 1e-15);

        let p = SystemParams {
            delta_omega_q: 0.5,
            ..base
        };
        assert_eq!(singlet_population_rate(&p, 0.0, singlet_state.matrix()), 0.0);
        let (_, pops) = deterministic_ode_check(&build_effective_model(&p).unwrap(), &singlet_state, 1e-3, 200);
        assert!(pops[200] < 1.0 - 1e-6);
    }

    #[test]
    fn commensurate_time_step() {
        let dt = commensurate_dt(6.1e-4);
        assert!(dt <= 6.1e-4);
        for t in DEFAULT_T_GRID {
            let n = t / dt;
            assert!((n - n.round()).abs() < 1e-6);
        }
    }

    fn small_ensemble(threads: Option<usize>) -> EnsembleSummary {
        let params = dc_params();
        let model = build_effective_model(&params).unwrap();
        let integrator = integrator_for(&model, 0.5, 17, 10);
        let mut cfg = EnsembleConfig::new(params, integrator, 37);
        cfg.rules = vec![Rule::Dc { center: 0.0 }, Rule::Optimal];
        cfg.success_targets = vec![0.5];
        cfg.threads = threads;
        cfg.spectra = true;
        run_ensemble(&cfg).unwrap()
    }

    #[test]
    fn ensemble_is_independent_of_thread_count() {
        let a = small_ensemble(Some(1));
        let b = small_ensemble(Some(3));
        assert_eq!(a.trajectories, b.trajectories);
        assert_eq!(a.rules, b.rules);
        let (sa, sb) = (a.spectra.unwrap().all.mean(), b.spectra.unwrap().all.mean());
        assert!(sa
            .values
            .iter()
            .zip(&sb.values)
            .all(|(x, y)| x.to_bits() == y.to_bits()));
        assert_eq!(a.times.len(), a.trajectories[0].overlap.len());
        let k = a.rules[0].selection.n_accept;
        assert_eq!(a.trajectories.iter().filter(|t| t.accepted["dc@0.5"]).count(), k);
    }

    #[test]
    fn lockin_rule_rejected_on_dc_phase() {
        let params = dc_params();
        let model = build_effective_model(&params).unwrap();
        let mut cfg = EnsembleConfig::new(params, integrator_for(&model, 0.1, 1, 1), 4);
        cfg.rules = vec![Rule::Lockin {
            lockin: LockinConfig::new(9.9, 0.65).unwrap(),
        }];
        assert!(matches!(run_ensemble(&cfg), Err(Error::CriterionMismatch { .. })));
        cfg.n_trajectories = 1;
        cfg.rules.clear();
        assert!(run_ensemble(&cfg).is_err());
    }
}
