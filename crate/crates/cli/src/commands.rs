// SPDX-License-Identifier: Apache-2.0

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use log::{info, warn};
use serde::Serialize;

use singlet_core::analytics::{linear_grid, mean_sx_closed_form, AnalyticParams, SpectrumModel};
use singlet_core::harness::{optimize_over_time, sweep_point, SweepConfig, SweepRow};
use singlet_core::signals::SignalResult;
use singlet_core::sme::default_dt;
use singlet_core::{
    build_effective_model, build_moment_system, peak_characterize, run_ensemble, steady_state, EnsembleConfig,
    EnsembleSummary, IntegratorConfig, Rule,
};

use crate::config::{RunConfig, Units};
use crate::error::CliError;
use crate::output::{atomic_write, Manifest, Table};

/// A loaded configuration and where its results go.
#[derive(Debug, Clone)]
pub struct Run {
    pub config: RunConfig,
    pub out: PathBuf,
}

impl Run {
    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn time_unit(&self) -> &'static str {
        match self.config.system.units {
            Units::GammaP => "1/γp",
            Units::Absolute => "absolute time units",
        }
    }

    fn rate_unit(&self) -> &'static str {
        match self.config.system.units {
            Units::GammaP => "γp",
            Units::Absolute => "absolute rate units",
        }
    }

    /// Writes `manifest.txt` and the canonical `config.toml`.
    fn write_manifest(&self, command: &str) -> Result<(), CliError> {
        let mut m = Manifest::default();
        m.set("command", command);
        m.set("version", env!("CARGO_PKG_VERSION"));
        m.set("config_sha256", self.config.hash());
        m.set("seed", self.config.ensemble.seed);
        m.set("trajectories", self.config.ensemble.trajectories);
        atomic_write(&self.path("manifest.txt"), m.to_text().as_bytes())?;
        atomic_write(&self.path("config.toml"), self.config.to_toml().as_bytes())
    }

    fn ensemble_config(&self, horizon: f64) -> Result<EnsembleConfig, CliError> {
        let cfg = &self.config;
        if cfg.ensemble.trajectories < 2 {
            return Err(CliError::Config("ensemble.trajectories must be at least 2".into()));
        }
        let model = cfg.model()?;
        let mut ec = EnsembleConfig::new(model.params, cfg.integrator(&model, horizon), cfg.ensemble.trajectories);
        ec.initial = cfg.ensemble.initial.into();
        ec.rules = cfg.rules(&model)?;
        ec.success_targets = cfg.ensemble.targets.clone();
        ec.threads = cfg.ensemble.threads;
        Ok(ec)
    }
}

#[derive(Serialize)]
struct Zeta {
    #[serde(skip_serializing_if = "Option::is_none")]
    mean_current: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    mean_current_weighted: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    lockin: Option<f64>,
}

impl From<SignalResult> for Zeta {
    fn from(s: SignalResult) -> Self {
        Self {
            mean_current: s.zeta_mean_current,
            mean_current_weighted: s.zeta_mean_current_weighted,
            lockin: s.zeta_lockin,
        }
    }
}

/// One line of `trajectories.jsonl`. `I[k]` is the photocurrent averaged over
/// `[t[k], t[k+1])`.
#[derive(Serialize)]
struct JsonRecord<'a> {
    seed: u64,
    trajectory: u64,
    t: &'a [f64],
    #[serde(rename = "I")]
    current: &'a [f64],
    overlap: &'a [f64],
    zeta: Zeta,
    accepted: &'a BTreeMap<String, bool>,
}

pub fn jsonl(summary: &EnsembleSummary) -> Vec<u8> {
    let mut out = Vec::new();
    for t in &summary.trajectories {
        let rec = JsonRecord {
            seed: summary.master_seed,
            trajectory: t.trajectory,
            t: &summary.times,
            current: t.current.as_deref().unwrap_or(&[]),
            overlap: &t.overlap,
            zeta: t.signals.into(),
            accepted: &t.accepted,
        };
        serde_json::to_writer(&mut out, &rec).expect("in-memory write");
        out.push(b'\n');
    }
    out
}

fn threshold_unit(rule: &Rule) -> &'static str {
    match rule {
        Rule::Optimal => "minimum overlap ⟨−|ρ|−⟩",
        Rule::Dc { .. } | Rule::WeightedDc { .. } => "|ζ − center| in shot-noise units",
        Rule::Lockin { .. } => "ζ_lockin in shot-noise units",
    }
}

/// Runs one ensemble and writes its bundle.
pub fn simulate(run: &Run) -> Result<(), CliError> {
    let cfg = &run.config;
    let mut ec = run.ensemble_config(cfg.integrator.t_final)?;
    ec.keep_currents = cfg.output.jsonl;
    let mut times = Vec::new();
    for &t in &cfg.analysis.histogram_times {
        if t <= ec.integrator.t_final * (1.0 + 1e-12) {
            times.push(t);
        }
    }
    info!(
        "simulating {} trajectories to T = {} with dt = {:.3e}",
        ec.n_trajectories, ec.integrator.t_final, ec.integrator.dt
    );
    let summary = run_ensemble(&ec)?;
    let columns: Vec<usize> = times
        .iter()
        .map(|&t| {
            summary.time_index(t).ok_or_else(|| {
                CliError::Config(format!(
                    "histogram time {t} is not a sample time; adjust integrator.samples"
                ))
            })
        })
        .collect::<Result<_, _>>()?;

    run.write_manifest("simulate")?;
    if cfg.output.jsonl {
        atomic_write(&run.path("trajectories.jsonl"), &jsonl(&summary))?;
    }

    let bins = cfg.analysis.histogram_bins;
    let mut names = vec!["overlap_lo".to_string(), "overlap_hi".to_string()];
    names.extend(times.iter().map(|t| format!("T_{t}")));
    let names: Vec<&str> = names.iter().map(String::as_str).collect();
    let mut hist = Table::new(&names)
        .comment("singlet overlap ⟨−|ρ|−⟩ histogram; overlap_lo/overlap_hi: bin edges (dimensionless)")
        .comment(format!(
            "T_x: number of trajectories in the bin at time x ({})",
            run.time_unit()
        ));
    let counts: Vec<Vec<usize>> = columns.iter().map(|&k| summary.overlap_histogram(k, bins)).collect();
    for b in 0..bins {
        let mut row = vec![
            (b as f64 / bins as f64).to_string(),
            ((b + 1) as f64 / bins as f64).to_string(),
        ];
        row.extend(counts.iter().map(|c| c[b].to_string()));
        hist.push(row);
    }
    hist.write(&run.path("overlap_histogram.csv"))?;

    let mut mean = Table::new(&["t", "mean_overlap", "undecided_fraction"])
        .comment(format!("t: time ({})", run.time_unit()))
        .comment("mean_overlap: ensemble mean of ⟨−|ρ|−⟩; undecided_fraction: share with overlap in (0.1, 0.9)");
    for (k, (t, m)) in summary.times.iter().zip(summary.mean_overlap()).enumerate() {
        mean.push([
            t.to_string(),
            m.to_string(),
            summary.undecided_fraction(k, 0.1, 0.9).to_string(),
        ]);
    }
    mean.write(&run.path("mean_overlap.csv"))?;

    let mut sel = Table::new(&["rule", "target", "threshold", "psuccess", "fidelity", "n_accept"])
        .comment("threshold: optimal = minimum overlap; dc, weighted_dc = |ζ − center|; lockin = ζ_lockin (shot-noise units)")
        .comment("target, psuccess, fidelity: dimensionless");
    for r in &summary.rules {
        let s = r.selection;
        sel.push([
            r.rule.name().to_string(),
            r.target.to_string(),
            s.threshold.to_string(),
            s.psuccess.to_string(),
            s.fidelity.to_string(),
            s.n_accept.to_string(),
        ]);
    }
    sel.write(&run.path("selection.csv"))?;

    if cfg.analysis.curves {
        for rule in &ec.rules {
            let mut t = Table::new(&["psuccess", "threshold", "fidelity", "bound"])
                .comment(format!("fidelity versus success probability, rule {}", rule.name()))
                .comment(format!(
                    "threshold: {}; bound: separated-distribution limit",
                    threshold_unit(rule)
                ));
            for p in summary.curve(rule)? {
                t.push([p.psuccess, p.threshold, p.fidelity, p.bound]);
            }
            t.write(&run.path(&format!("curve_{}.csv", rule.name())))?;
        }
    }

    let mut text = String::new();
    let _ = writeln!(text, "trajectories: {}", summary.len());
    let _ = writeln!(text, "T: {} ({})", ec.integrator.t_final, run.time_unit());
    let _ = writeln!(text, "dt: {}", ec.integrator.dt);
    let last = summary.times.len() - 1;
    let _ = writeln!(text, "mean final overlap: {:.4}", summary.mean_overlap()[last]);
    let _ = writeln!(
        text,
        "undecided fraction (0.1, 0.9): {:.4}",
        summary.undecided_fraction(last, 0.1, 0.9)
    );
    for r in &summary.rules {
        let _ = writeln!(
            text,
            "{} @ {}: threshold {:.4}, psuccess {:.4}, F {:.4}",
            r.rule.name(),
            r.target,
            r.selection.threshold,
            r.selection.psuccess,
            r.selection.fidelity
        );
    }
    atomic_write(&run.path("summary.txt"), text.as_bytes())?;
    info!("wrote results to {}", run.out.display());
    Ok(())
}

/// Analytic spectrum and peak report on the configured grid, optionally with
/// simulated periodograms.
pub fn spectrum(run: &Run) -> Result<(), CliError> {
    let cfg = &run.config;
    let sp = cfg
        .analysis
        .spectrum
        .clone()
        .ok_or_else(|| CliError::Config("[analysis.spectrum] with min, max and points is required".into()))?;
    let model = cfg.model()?;
    let sm = SpectrumModel::new(build_moment_system(AnalyticParams::from_model(&model)))?;
    let grid = linear_grid(sp.min, sp.max, sp.points);
    let table = sm.table(&grid)?;
    run.write_manifest("spectrum")?;

    let freq = format!("delta: angular frequency ({})", run.rate_unit());
    let mut analytic = Table::new(&["delta", "s_analytic"])
        .comment(freq.clone())
        .comment(format!(
            "s_analytic: normalized photocurrent spectrum ({})",
            "1/γp, shot noise = 1/2π"
        ));
    for (d, v) in table.frequencies.iter().zip(&table.values) {
        analytic.push([d, v]);
    }
    analytic.write(&run.path("spectrum_analytic.csv"))?;

    let mut peak = Table::new(&["delta0", "fwhm", "height"]).comment(format!(
        "delta0, fwhm: {}; height: above the 1/2π floor",
        run.rate_unit()
    ));
    match peak_characterize(&table) {
        Ok(p) => {
            info!("peak at {:.4} with FWHM {:.4}", p.delta0, p.fwhm);
            peak.push([p.delta0, p.fwhm, p.height]);
        }
        Err(e) => {
            warn!("{e}");
            peak = peak.comment("no peak above the shot-noise floor on this grid");
        }
    }
    peak.write(&run.path("peak.csv"))?;

    if sp.simulate {
        let mut ec = run.ensemble_config(cfg.integrator.t_final)?;
        ec.rules.clear();
        ec.spectra = true;
        info!("averaging periodograms of {} trajectories", ec.n_trajectories);
        let summary = run_ensemble(&ec)?;
        let spectra = summary.spectra.expect("requested");
        let n = ec.integrator.steps();
        let classes = [&spectra.all, &spectra.singlet, &spectra.triplet];
        let means: Vec<_> = classes.iter().map(|a| a.mean()).collect();
        let errors: Vec<_> = classes.iter().map(|a| a.standard_error()).collect();
        let keep: Vec<usize> = (0..means[0].len())
            .filter(|&k| (sp.min..=sp.max).contains(&means[0].frequencies[k]))
            .collect();
        let freqs: Vec<f64> = keep.iter().map(|&k| means[0].frequencies[k]).collect();
        let windowed = sm.finite_record_expectation(n, ec.integrator.dt, &freqs)?;
        let mut t = Table::new(&[
            "delta",
            "all",
            "all_se",
            "singlet",
            "singlet_se",
            "triplet",
            "triplet_se",
            "s_analytic",
            "s_finite_record",
        ])
        .comment(freq)
        .comment("periodogram averages (1/γp) by final overlap: singlet ≥ 0.8, triplet ≤ 0.2; *_se: standard errors")
        .comment(format!(
            "records: all {}, singlet {}, triplet {}",
            spectra.all.count(),
            spectra.singlet.count(),
            spectra.triplet.count()
        ))
        .comment("s_finite_record: analytic spectrum seen through the finite-record window");
        for (j, &k) in keep.iter().enumerate() {
            let mut row = vec![freqs[j]];
            for c in 0..3 {
                row.push(means[c].values[k]);
                row.push(errors[c][k]);
            }
            row.push(sm.value(freqs[j])?);
            row.push(windowed[j]);
            t.push(row);
        }
        t.write(&run.path("spectrum_simulated.csv"))?;
    }
    Ok(())
}

const SWEEP_COLUMNS: [&str; 10] = [
    "axis",
    "value",
    "t",
    "target",
    "rule",
    "rule_index",
    "threshold",
    "psuccess",
    "fidelity",
    "n_accept",
];

fn sweep_table(run: &Run, hash: &str) -> Table {
    Table::new(&SWEEP_COLUMNS)
        .comment(format!("config_sha256 = {hash}"))
        .comment(format!("value: sweep parameter ({}); t: integration time ({})", run.rate_unit(), run.time_unit()))
        .comment("threshold: optimal = minimum overlap; dc = |ζ − center| (shot-noise units); target, psuccess, fidelity: dimensionless")
}

fn push_rows(table: &mut Table, rows: &[SweepRow], rules: &[Rule]) {
    for r in rows {
        let idx = rules.iter().position(|x| *x == r.rule).expect("rule from the config");
        table.push([
            r.axis.name().to_string(),
            r.value.to_string(),
            r.t.to_string(),
            r.target.to_string(),
            r.rule.name().to_string(),
            idx.to_string(),
            r.selection.threshold.to_string(),
            r.selection.psuccess.to_string(),
            r.selection.fidelity.to_string(),
            r.selection.n_accept.to_string(),
        ]);
    }
}

/// Rows of a part file written for the same config, if it is intact.
fn read_part(path: &Path, hash: &str, cfg: &SweepConfig) -> Option<Vec<SweepRow>> {
    let t = Table::read(path).ok()?;
    if t.comments.first()? != &format!("config_sha256 = {hash}") || t.columns != SWEEP_COLUMNS {
        return None;
    }
    let f = |s: &str| s.parse::<f64>().ok();
    t.rows
        .iter()
        .map(|r| {
            let rule = *cfg.rules.get(r[5].parse::<usize>().ok()?)?;
            Some(SweepRow {
                axis: cfg.axis,
                value: f(&r[1])?,
                t: f(&r[2])?,
                target: f(&r[3])?,
                rule,
                selection: singlet_core::harness::Selection {
                    threshold: f(&r[6])?,
                    psuccess: f(&r[7])?,
                    fidelity: f(&r[8])?,
                    n_accept: r[9].parse().ok()?,
                },
            })
        })
        .collect()
}

/// Decoherence sweep with per-value part files, so an interrupted run resumes
/// where it stopped.
pub fn sweep(run: &Run) -> Result<(), CliError> {
    let cfg = &run.config;
    let sw = cfg
        .analysis
        .sweep
        .clone()
        .ok_or_else(|| CliError::Config("[analysis.sweep] with axis and values is required".into()))?;
    let t_max = sw.t_grid.iter().cloned().fold(0.0, f64::max);
    let mut base = run.ensemble_config(t_max)?;
    if cfg.integrator.dt.is_none() {
        let mut max_dt = default_dt(&cfg.model()?);
        for &v in &sw.values {
            let m = build_effective_model(&sw.axis.apply(&base.params, v)?)?;
            max_dt = max_dt.min(default_dt(&m));
        }
        let mut ic =
            IntegratorConfig::with_dt(singlet_core::harness::commensurate_dt(max_dt), t_max, cfg.ensemble.seed);
        ic.scheme = cfg.integrator.scheme;
        ic.renormalize = cfg.integrator.renormalize;
        ic.positivity_check_stride = cfg.integrator.positivity_check_stride;
        base.integrator = ic;
    }
    let scfg = SweepConfig {
        rules: base.rules.clone(),
        base,
        axis: sw.axis,
        values: sw.values.clone(),
        targets: cfg.ensemble.targets.clone(),
        t_grid: sw.t_grid.clone(),
    };
    let hash = cfg.hash();
    run.write_manifest("sweep")?;
    let parts = run.path("sweep_parts");
    let mut rows = Vec::new();
    for (i, &v) in sw.values.iter().enumerate() {
        let path = parts.join(format!("{i:04}.csv"));
        let part = match read_part(&path, &hash, &scfg) {
            Some(r) => {
                info!("{} = {v}: reusing {}", sw.axis.name(), path.display());
                r
            }
            None => {
                info!(
                    "{} = {v}: running {} trajectories",
                    sw.axis.name(),
                    scfg.base.n_trajectories
                );
                let r = sweep_point(&scfg, v)?;
                let mut t = sweep_table(run, &hash);
                push_rows(&mut t, &r, &scfg.rules);
                t.write(&path)?;
                r
            }
        };
        rows.extend(part);
    }
    let mut all = sweep_table(run, &hash);
    push_rows(&mut all, &rows, &scfg.rules);
    all.write(&run.path("sweep.csv"))?;

    let mut opt = Table::new(&["axis", "value", "target", "rule", "t_opt", "fidelity", "infidelity"])
        .comment(format!(
            "best fidelity over the T grid, refined by a parabola in log T; t_opt in {}",
            run.time_unit()
        ))
        .comment(format!("value: sweep parameter ({})", run.rate_unit()));
    for o in optimize_over_time(&rows) {
        opt.push([
            o.axis.name().to_string(),
            o.value.to_string(),
            o.target.to_string(),
            o.rule.name().to_string(),
            o.t_opt.to_string(),
            o.fidelity.to_string(),
            (1.0 - o.fidelity).to_string(),
        ]);
    }
    opt.write(&run.path("optimum.csv"))?;
    Ok(())
}

/// Steady-state moments by linear solve and the closed form, with a self-check.
pub fn steady_state_report(chi: f64, delta_q: f64, gamma_p: f64) -> Result<String, CliError> {
    if !(gamma_p > 0.0) || !chi.is_finite() || !delta_q.is_finite() {
        return Err(CliError::Config(
            "need finite chi, delta_q and a positive gamma_p".into(),
        ));
    }
    let ms = build_moment_system(AnalyticParams {
        chi,
        delta_q,
        gamma_p,
        theta: 0.0,
        theta_kappa: 0.0,
        eta_eff: 1.0,
    });
    let x = steady_state(&ms)?;
    let solve = x.s_x();
    let formula = mean_sx_closed_form(chi, delta_q, gamma_p);
    let diff = (solve - formula).abs();
    let mut text = String::new();
    let _ = writeln!(text, "chi = {chi}, delta_q = {delta_q}, gamma_p = {gamma_p}");
    for (k, c) in x.entries().iter().enumerate() {
        let _ = writeln!(text, "x[{k}] = {:+.12e} {:+.12e}i", c.re, c.im);
    }
    let _ = writeln!(text, "<S_x> (solve)   = {solve:+.12}");
    let _ = writeln!(text, "<S_x> (formula) = {formula:+.12}");
    let _ = writeln!(text, "<S_y> = {:+.12}", x.s_y());
    let _ = writeln!(text, "<S_z> = {:+.12}", x.s_z());
    let _ = writeln!(text, "|difference| = {diff:.3e}");
    if !(diff <= 1e-8) {
        return Err(CliError::SelfCheck(format!(
            "solve and closed form disagree by {diff:.3e}\n{text}"
        )));
    }
    Ok(text)
}
