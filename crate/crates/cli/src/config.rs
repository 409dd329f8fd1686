// SPDX-License-Identifier: Apache-2.0

//! Strict TOML run configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use singlet_core::analytics::{linear_grid, peak_characterize, AnalyticParams, SpectrumModel};
use singlet_core::harness::{commensurate_dt, DecoherenceAxis, InitialState, Rule, DEFAULT_T_GRID};
use singlet_core::sme::{default_dt, Scheme};
use singlet_core::{
    build_effective_model, build_moment_system, EffectiveModel, IntegratorConfig, LockinConfig, SystemParams,
};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub system: SystemSection,
    #[serde(default)]
    pub integrator: IntegratorSection,
    #[serde(default)]
    pub ensemble: EnsembleSection,
    #[serde(default)]
    pub analysis: AnalysisSection,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Units {
    /// Rates in units of `γp`, times in units of `1/γp`.
    #[default]
    GammaP,
    /// Values taken as given; requires `[system.cavity]`.
    Absolute,
}

/// Qubit-side parameters. Without a `[system.cavity]` table the bad-cavity
/// preset supplies the cavity, with `γp = 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSection {
    #[serde(default)]
    pub units: Units,
    /// Resonant Rabi frequency. Exactly one of `chi` and `cavity.beta`.
    pub chi: Option<f64>,
    #[serde(default)]
    pub delta_q: f64,
    /// Homodyne phase `θ` in radians.
    #[serde(default)]
    pub theta: f64,
    #[serde(default = "one")]
    pub eta: f64,
    #[serde(default)]
    pub gamma_par: f64,
    /// Pure dephasing rate `1/τ`.
    #[serde(default)]
    pub dephasing: f64,
    #[serde(default)]
    pub delta_chi: f64,
    #[serde(default)]
    pub delta_omega_q: f64,
    pub cavity: Option<CavitySection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CavitySection {
    pub kappa1: f64,
    pub kappa2: f64,
    #[serde(default)]
    pub delta_c: f64,
    pub g: f64,
    pub beta: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegratorSection {
    #[serde(default = "ten")]
    pub t_final: f64,
    /// Step size; by default the largest `T/n` below a hundredth of the fastest timescale.
    pub dt: Option<f64>,
    #[serde(default)]
    pub scheme: Scheme,
    #[serde(default = "yes")]
    pub renormalize: bool,
    /// Number of overlap samples per trajectory (upper bound).
    #[serde(default = "hundred")]
    pub samples: usize,
    #[serde(default = "fifty")]
    pub positivity_check_stride: usize,
}

impl Default for IntegratorSection {
    fn default() -> Self {
        Self {
            t_final: 10.0,
            dt: None,
            scheme: Scheme::default(),
            renormalize: true,
            samples: 100,
            positivity_check_stride: 50,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialChoice {
    #[default]
    Eg,
    Product,
    Singlet,
}

impl From<InitialChoice> for InitialState {
    fn from(c: InitialChoice) -> Self {
        match c {
            InitialChoice::Eg => InitialState::Eg,
            InitialChoice::Product => InitialState::Product,
            InitialChoice::Singlet => InitialState::Singlet,
        }
    }
}

/// Post-selection rule as written in the config. A lock-in without `omega`
/// or `tau` takes them from the analytic spectral peak (`Δ0`, `1/Γ`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum RuleSpec {
    Optimal,
    Dc {
        #[serde(default)]
        center: f64,
    },
    WeightedDc {
        #[serde(default = "half")]
        center: f64,
    },
    Lockin {
        omega: Option<f64>,
        tau: Option<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleSection {
    #[serde(default = "default_trajectories")]
    pub trajectories: usize,
    #[serde(default = "one_u64")]
    pub seed: u64,
    #[serde(default)]
    pub initial: InitialChoice,
    pub threads: Option<usize>,
    #[serde(default = "default_targets")]
    pub targets: Vec<f64>,
    #[serde(default = "default_rules")]
    pub rules: Vec<RuleSpec>,
}

impl Default for EnsembleSection {
    fn default() -> Self {
        Self {
            trajectories: default_trajectories(),
            seed: 1,
            initial: InitialChoice::default(),
            threads: None,
            targets: default_targets(),
            rules: default_rules(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisSection {
    /// Times of the overlap-histogram columns; times past `t_final` are skipped.
    #[serde(default = "default_histogram_times")]
    pub histogram_times: Vec<f64>,
    #[serde(default = "twenty")]
    pub histogram_bins: usize,
    /// Emit fidelity-versus-success curves.
    #[serde(default = "yes")]
    pub curves: bool,
    pub spectrum: Option<SpectrumSection>,
    pub sweep: Option<SweepSection>,
}

impl Default for AnalysisSection {
    fn default() -> Self {
        Self {
            histogram_times: default_histogram_times(),
            histogram_bins: 20,
            curves: true,
            spectrum: None,
            sweep: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectrumSection {
    pub min: f64,
    pub max: f64,
    pub points: usize,
    /// Also average periodograms over `ensemble.trajectories` simulated records.
    #[serde(default)]
    pub simulate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub axis: DecoherenceAxis,
    pub values: Vec<f64>,
    #[serde(default = "default_t_grid")]
    pub t_grid: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub dir: Option<PathBuf>,
    #[serde(default = "yes")]
    pub jsonl: bool,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { dir: None, jsonl: true }
    }
}

fn one() -> f64 {
    1.0
}
fn half() -> f64 {
    0.5
}
fn ten() -> f64 {
    10.0
}
fn yes() -> bool {
    true
}
fn hundred() -> usize {
    100
}
fn fifty() -> usize {
    50
}
fn twenty() -> usize {
    20
}
fn one_u64() -> u64 {
    1
}
fn default_trajectories() -> usize {
    2000
}
fn default_targets() -> Vec<f64> {
    vec![0.5]
}
fn default_rules() -> Vec<RuleSpec> {
    vec![RuleSpec::Optimal]
}
fn default_histogram_times() -> Vec<f64> {
    vec![1.0, 2.0, 5.0, 10.0]
}
fn default_t_grid() -> Vec<f64> {
    DEFAULT_T_GRID.to_vec()
}

fn config_error(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| config_error(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| config_error(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            CliError::Config(m) => config_error(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the canonical serialization.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_toml().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.params()?;
        let i = &self.integrator;
        if !(i.t_final > 0.0 && i.t_final.is_finite()) {
            return Err(config_error(format!(
                "integrator.t_final must be positive, got {}",
                i.t_final
            )));
        }
        if let Some(dt) = i.dt {
            if !(dt > 0.0 && dt <= i.t_final) {
                return Err(config_error(format!(
                    "integrator.dt must lie in (0, t_final], got {dt}"
                )));
            }
        }
        if i.samples == 0 {
            return Err(config_error("integrator.samples must be at least 1"));
        }
        let e = &self.ensemble;
        if let Some(0) = e.threads {
            return Err(config_error("ensemble.threads must be at least 1"));
        }
        for &t in &e.targets {
            if !(t > 0.0 && t <= 1.0) {
                return Err(config_error(format!("ensemble.targets must lie in (0, 1], got {t}")));
            }
        }
        for r in &e.rules {
            if let RuleSpec::Lockin { omega, tau } = r {
                if omega.is_some_and(|w| !w.is_finite()) || tau.is_some_and(|t| !(t > 0.0 && t.is_finite())) {
                    return Err(config_error("lockin rule needs a finite omega and a positive tau"));
                }
            }
        }
        if self.analysis.histogram_bins == 0 {
            return Err(config_error("analysis.histogram_bins must be at least 1"));
        }
        if let Some(s) = &self.analysis.spectrum {
            if !(s.min.is_finite() && s.max > s.min && s.points >= 2) {
                return Err(config_error("analysis.spectrum needs min < max and at least 2 points"));
            }
        }
        if let Some(s) = &self.analysis.sweep {
            if s.values.is_empty() {
                return Err(config_error("analysis.sweep.values is empty"));
            }
            if s.values.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
                return Err(config_error("analysis.sweep.values must be positive"));
            }
            if s.t_grid.is_empty() || s.t_grid.iter().any(|t| !(*t > 0.0 && t.is_finite())) {
                return Err(config_error("analysis.sweep.t_grid must be nonempty and positive"));
            }
        }
        Ok(())
    }

    /// Physical parameters in simulation units.
    pub fn params(&self) -> Result<SystemParams, CliError> {
        let s = &self.system;
        let bad = |e: singlet_core::Error| config_error(format!("system: {e}"));
        let mut p = match (&s.cavity, s.units) {
            (None, Units::Absolute) => {
                return Err(config_error("system.units = \"absolute\" requires [system.cavity]"))
            }
            (None, Units::GammaP) => {
                let chi = s.chi.ok_or_else(|| config_error("system.chi is required"))?;
                SystemParams::bad_cavity(chi, s.delta_q, s.theta)
            }
            (Some(c), units) => {
                let mut p = SystemParams {
                    kappa1: c.kappa1,
                    kappa2: c.kappa2,
                    delta_c: c.delta_c,
                    delta_q: s.delta_q,
                    g: c.g,
                    delta_g: 0.0,
                    delta_omega_q: 0.0,
                    beta: 0.0,
                    gamma_par: 0.0,
                    tau_phase: f64::INFINITY,
                    eta: s.eta,
                    theta: s.theta,
                };
                p.beta = match (s.chi, c.beta) {
                    (Some(chi), None) => p.beta_for_chi(chi),
                    (None, Some(beta)) => beta,
                    _ => return Err(config_error("give exactly one of system.chi and system.cavity.beta")),
                };
                if units == Units::GammaP {
                    let gp = singlet_core::derive_params(&p).map_err(bad)?.gamma_p;
                    if (gp - 1.0).abs() > 1e-6 {
                        return Err(config_error(format!(
                            "cavity implies γp = {gp}, not 1; rescale it or set system.units = \"absolute\""
                        )));
                    }
                }
                p
            }
        };
        p.eta = s.eta;
        p.gamma_par = s.gamma_par;
        p.tau_phase = if s.dephasing > 0.0 {
            1.0 / s.dephasing
        } else {
            f64::INFINITY
        };
        if s.dephasing < 0.0 {
            return Err(config_error("system.dephasing must be non-negative"));
        }
        p.delta_omega_q = s.delta_omega_q;
        if s.delta_chi != 0.0 {
            p = p.with_rabi_inhomogeneity(s.delta_chi).map_err(bad)?;
        }
        p.validate().map_err(bad)?;
        Ok(p)
    }

    pub fn model(&self) -> Result<EffectiveModel, CliError> {
        build_effective_model(&self.params()?).map_err(|e| config_error(format!("system: {e}")))
    }

    /// Step size: the configured one, else the largest `1/m` (or `T/m` when
    /// `T` is not commensurate with it) below the default rule.
    pub fn dt(&self, model: &EffectiveModel, horizon: f64) -> f64 {
        if let Some(dt) = self.integrator.dt {
            return dt;
        }
        let max_dt = default_dt(model);
        let dt = commensurate_dt(max_dt);
        let n = horizon / dt;
        if (n - n.round()).abs() < 1e-9 * n.max(1.0) {
            dt
        } else {
            horizon / (horizon / max_dt).ceil()
        }
    }

    pub fn integrator(&self, model: &EffectiveModel, horizon: f64) -> IntegratorConfig {
        let i = &self.integrator;
        let dt = self.dt(model, horizon);
        let mut cfg = IntegratorConfig::with_dt(dt, horizon, self.ensemble.seed);
        cfg.scheme = i.scheme;
        cfg.renormalize = i.renormalize;
        cfg.positivity_check_stride = i.positivity_check_stride;
        let steps = cfg.steps();
        cfg.record_stride = (steps / i.samples).max(1);
        while steps % cfg.record_stride != 0 {
            cfg.record_stride -= 1;
        }
        cfg
    }

    /// Resolves config rules against the model (lock-in defaults from the analytic peak).
    pub fn rules(&self, model: &EffectiveModel) -> Result<Vec<Rule>, CliError> {
        let mut peak = None;
        self.ensemble
            .rules
            .iter()
            .map(|r| {
                Ok(match *r {
                    RuleSpec::Optimal => Rule::Optimal,
                    RuleSpec::Dc { center } => Rule::Dc { center },
                    RuleSpec::WeightedDc { center } => Rule::WeightedDc { center },
                    RuleSpec::Lockin { omega, tau } => {
                        let (w, t) = match (omega, tau) {
                            (Some(w), Some(t)) => (w, t),
                            _ => {
                                if peak.is_none() {
                                    peak = Some(analytic_peak(model)?);
                                }
                                let (d0, fwhm) = peak.expect("set above");
                                (omega.unwrap_or(d0), tau.unwrap_or(1.0 / fwhm))
                            }
                        };
                        Rule::Lockin {
                            lockin: LockinConfig::new(w, t).map_err(|e| config_error(e.to_string()))?,
                        }
                    }
                })
            })
            .collect()
    }
}

/// `(Δ0, Γ)` of the analytic photocurrent spectrum.
pub fn analytic_peak(model: &EffectiveModel) -> Result<(f64, f64), CliError> {
    let ap = AnalyticParams::from_model(model);
    let sm = SpectrumModel::new(build_moment_system(ap)).map_err(CliError::Numerical)?;
    let span = 4.0 * (model.derived.chi.norm() + model.params.delta_q.abs() + model.derived.gamma_p);
    let table = sm.table(&linear_grid(0.0, span, 40_001)).map_err(CliError::Numerical)?;
    let pk = peak_characterize(&table).map_err(|e| config_error(format!("lock-in defaults: {e}")))?;
    Ok((pk.delta0, pk.fwhm))
}
