// SPDX-License-Identifier: Apache-2.0

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use singlet_cli::output::{Manifest, Table};
use singlet_cli::RunConfig;

const TINY: &str = r#"
[system]
chi = 16.5
delta_q = 10.0
theta = -1.5707963267948966

[integrator]
t_final = 1.0
samples = 10

[ensemble]
trajectories = 20
seed = 9
rules = [{ kind = "optimal" }, { kind = "dc" }, { kind = "weighted_dc" }]
targets = [0.25, 0.5]

[analysis]
histogram_times = [0.5, 1.0]
"#;

fn singlet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_singlet"))
        .args(args)
        .env_remove("SINGLET_OUT")
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn run_ok(args: &[&str]) {
    let out = singlet(args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn simulate_writes_a_complete_bundle() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "tiny.toml", TINY);
    let out = dir.path().join("out");
    run_ok(&[
        "--quiet",
        "simulate",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);

    for f in [
        "overlap_histogram.csv",
        "mean_overlap.csv",
        "selection.csv",
        "curve_optimal.csv",
        "curve_dc.csv",
        "curve_weighted_dc.csv",
    ] {
        let t = Table::read(&out.join(f)).unwrap();
        assert!(!t.comments.is_empty(), "{f} lacks a unit header");
        assert!(!t.rows.is_empty(), "{f} is empty");
    }
    let hist = Table::read(&out.join("overlap_histogram.csv")).unwrap();
    assert_eq!(hist.columns, ["overlap_lo", "overlap_hi", "T_0.5", "T_1"]);
    let total: usize = hist.rows.iter().map(|r| r[3].parse::<usize>().unwrap()).sum();
    assert_eq!(total, 20);
    let sel = Table::read(&out.join("selection.csv")).unwrap();
    assert_eq!(sel.rows.len(), 6);

    let lines: Vec<serde_json::Value> = fs::read_to_string(out.join("trajectories.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 20);
    let first = &lines[0];
    assert_eq!(first["seed"], 9);
    assert_eq!(first["t"].as_array().unwrap().len(), 11);
    assert_eq!(first["I"].as_array().unwrap().len(), 10);
    assert_eq!(first["overlap"].as_array().unwrap().len(), 11);
    assert!(first["zeta"]["mean_current"].is_f64());
    assert!(first["accepted"]["dc@0.5"].is_boolean());

    let manifest = Manifest::parse(&fs::read_to_string(out.join("manifest.txt")).unwrap());
    let saved = RunConfig::from_toml(&fs::read_to_string(out.join("config.toml")).unwrap()).unwrap();
    assert_eq!(manifest.get("config_sha256"), Some(saved.hash().as_str()));
    assert_eq!(saved, RunConfig::from_toml(TINY).unwrap());
}

#[test]
fn jsonl_is_reproducible_across_runs_and_threads() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "tiny.toml", TINY);
    let c = cfg.to_str().unwrap();
    let bundle = |name: &str, threads: &str| {
        let out = dir.path().join(name);
        run_ok(&[
            "--quiet",
            "simulate",
            "--config",
            c,
            "--out",
            out.to_str().unwrap(),
            "--threads",
            threads,
        ]);
        fs::read(out.join("trajectories.jsonl")).unwrap()
    };
    let a = bundle("a", "1");
    assert_eq!(a, bundle("b", "1"));
    assert_eq!(a, bundle("c", "3"));
}

#[test]
fn seed_flag_changes_results_and_hash() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "tiny.toml", TINY);
    let c = cfg.to_str().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    run_ok(&["--quiet", "simulate", "--config", c, "--out", a.to_str().unwrap()]);
    run_ok(&[
        "--quiet",
        "simulate",
        "--config",
        c,
        "--out",
        b.to_str().unwrap(),
        "--seed",
        "10",
    ]);
    let m = |d: &Path| Manifest::parse(&fs::read_to_string(d.join("manifest.txt")).unwrap());
    assert_ne!(m(&a).get("config_sha256"), m(&b).get("config_sha256"));
    assert_eq!(m(&b).get("seed"), Some("10"));
    assert_ne!(
        fs::read(a.join("trajectories.jsonl")).unwrap(),
        fs::read(b.join("trajectories.jsonl")).unwrap()
    );
}

#[test]
fn output_root_comes_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "tiny.toml", TINY);
    let root = dir.path().join("env-out");
    let out = Command::new(env!("CARGO_BIN_EXE_singlet"))
        .args(["--quiet", "simulate", "--config", cfg.to_str().unwrap()])
        .env("SINGLET_OUT", &root)
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(root.join("manifest.txt").exists());
}

#[test]
fn config_errors_exit_with_status_two() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write_config(dir.path(), "bad.toml", &TINY.replace("delta_q", "ggamma"));
    let out = singlet(&[
        "simulate",
        "--config",
        bad.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("ggamma"));

    let missing = singlet(&["simulate", "--config", dir.path().join("nope.toml").to_str().unwrap()]);
    assert_eq!(missing.status.code(), Some(2));

    let no_grid = singlet(&[
        "spectrum",
        "--config",
        write_config(dir.path(), "s.toml", TINY).to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(no_grid.status.code(), Some(2));

    let empty = TINY.to_string() + "\n[analysis.sweep]\naxis = \"gamma_par\"\nvalues = []\n";
    let out = singlet(&[
        "sweep",
        "--config",
        write_config(dir.path(), "e.toml", &empty).to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));

    // a lock-in rule on the DC quadrature
    let mismatch = TINY.replace(
        "{ kind = \"optimal\" }",
        "{ kind = \"lockin\", omega = 10.0, tau = 0.6 }",
    );
    let out = singlet(&[
        "simulate",
        "--config",
        write_config(dir.path(), "m.toml", &mismatch).to_str().unwrap(),
        "--out",
        dir.path().join("m").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn analytic_spectrum_reports_the_peak() {
    let dir = tempfile::tempdir().unwrap();
    let text = "[system]\nchi = 10.0\n[ensemble]\ntrajectories = 0\n[analysis.spectrum]\nmin = 0.0\nmax = 20.0\npoints = 4001\n";
    let cfg = write_config(dir.path(), "s.toml", text);
    let out = dir.path().join("out");
    run_ok(&[
        "--quiet",
        "spectrum",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    let peak = Table::read(&out.join("peak.csv")).unwrap();
    let d0: f64 = peak.rows[0][0].parse().unwrap();
    let fwhm: f64 = peak.rows[0][1].parse().unwrap();
    assert!((d0 - 9.89).abs() < 0.01, "{d0}");
    assert!((fwhm - 1.54).abs() < 0.01, "{fwhm}");
    let s = Table::read(&out.join("spectrum_analytic.csv")).unwrap();
    assert_eq!(s.rows.len(), 4001);
    assert!(s.comments.iter().any(|c| c.contains("γp")));
    assert!(!out.join("spectrum_simulated.csv").exists());
}

#[test]
fn simulated_spectrum_shares_the_frequency_axis() {
    let dir = tempfile::tempdir().unwrap();
    let text = "[system]\nchi = 10.0\n[integrator]\nt_final = 2.0\n[ensemble]\ntrajectories = 4\n\
                [analysis.spectrum]\nmin = 0.0\nmax = 20.0\npoints = 201\nsimulate = true\n";
    let cfg = write_config(dir.path(), "s.toml", text);
    let out = dir.path().join("out");
    run_ok(&[
        "--quiet",
        "spectrum",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    let t = Table::read(&out.join("spectrum_simulated.csv")).unwrap();
    assert_eq!(t.columns.len(), 9);
    // bins 2πk/T up to 20
    assert_eq!(t.rows.len(), (20.0 / std::f64::consts::PI).floor() as usize + 1);
}

#[test]
fn sweep_resumes_from_part_files() {
    let dir = tempfile::tempdir().unwrap();
    let text = TINY.replace("trajectories = 20", "trajectories = 6")
        + "\n[analysis.sweep]\naxis = \"gamma_par\"\nvalues = [0.01, 0.1]\nt_grid = [0.5, 1.0]\n";
    let cfg = write_config(dir.path(), "sweep.toml", &text);
    let out = dir.path().join("out");
    let args = [
        "--quiet",
        "sweep",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ];
    run_ok(&args);
    let full = fs::read(out.join("sweep.csv")).unwrap();
    let optimum = fs::read(out.join("optimum.csv")).unwrap();
    let table = Table::read(&out.join("sweep.csv")).unwrap();
    // 2 values × 2 times × 3 rules × 2 targets
    assert_eq!(table.rows.len(), 24);

    // interrupted after the first value
    fs::remove_file(out.join("sweep_parts/0001.csv")).unwrap();
    fs::remove_file(out.join("sweep.csv")).unwrap();
    let kept = fs::metadata(out.join("sweep_parts/0000.csv"))
        .unwrap()
        .modified()
        .unwrap();
    run_ok(&args);
    assert_eq!(fs::read(out.join("sweep.csv")).unwrap(), full);
    assert_eq!(fs::read(out.join("optimum.csv")).unwrap(), optimum);
    assert_eq!(
        fs::metadata(out.join("sweep_parts/0000.csv"))
            .unwrap()
            .modified()
            .unwrap(),
        kept
    );

    // a part from a different config is recomputed, not reused
    let other = write_config(dir.path(), "other.toml", &text.replace("seed = 9", "seed = 10"));
    run_ok(&[
        "--quiet",
        "sweep",
        "--config",
        other.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_ne!(fs::read(out.join("sweep.csv")).unwrap(), full);
}

#[test]
fn steady_state_self_check() {
    let out = singlet(&["steady-state", "--chi", "16.5", "--delta-q", "10"]);
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    let sx: f64 = text
        .lines()
        .find(|l| l.starts_with("<S_x> (solve)"))
        .and_then(|l| l.split('=').nth(1))
        .unwrap()
        .trim()
        .parse()
        .unwrap();
    assert!((sx.abs() - 1.52).abs() < 0.0152);

    let dark = singlet(&["steady-state", "--chi", "0", "--delta-q", "10"]);
    assert!(String::from_utf8_lossy(&dark.stdout).contains("<S_z> = -2.000000000000"));

    let bad = singlet(&["steady-state", "--chi", "1", "--delta-q", "1", "--gamma-p", "0"]);
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn exit_codes_by_error_kind() {
    use singlet_cli::CliError;
    assert_eq!(CliError::Config(String::new()).code(), 2);
    assert_eq!(CliError::SelfCheck(String::new()).code(), 4);
    let abort = singlet_core::Error::TrajectoryAborted {
        master_seed: 1,
        trajectory: 2,
        source: Box::new(singlet_core::Error::NoPeak),
    };
    assert_eq!(CliError::from(abort).code(), 3);
}
