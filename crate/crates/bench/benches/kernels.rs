// SPDX-License-Identifier: Apache-2.0

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use std::hint::black_box;

use singlet_bench::{ac_model, dc_model, eg, record};
use singlet_core::analytics::{linear_grid, AnalyticParams, SpectrumModel};
use singlet_core::signals::{lockin_signal, periodogram_of, PeriodogramPlan};
use singlet_core::sme::{default_dt, Integrator, IntegratorConfig, Scheme};
use singlet_core::{build_moment_system, run_trajectory, LockinConfig};

fn steps(c: &mut Criterion) {
    let m = dc_model();
    let dt = default_dt(&m);
    let rho = *eg().matrix();
    let mut g = c.benchmark_group("step");
    for scheme in [Scheme::Kraus, Scheme::Explicit] {
        let integ = Integrator::new(&m, scheme, dt).unwrap();
        g.bench_function(format!("{scheme:?}"), |b| {
            b.iter(|| integ.advance(black_box(&rho), black_box(0.3 * dt.sqrt())))
        });
    }
    g.finish();

    let cfg = IntegratorConfig::with_dt(dt, 1.0, 7);
    c.bench_function("trajectory_t1", |b| {
        b.iter_batched(
            eg,
            |rho0| run_trajectory(&m, &cfg, &rho0, 3).unwrap(),
            BatchSize::SmallInput,
        )
    });
}

fn signals(c: &mut Criterion) {
    let m = ac_model();
    let (current, dt) = record(&m);
    let plan = PeriodogramPlan::new(current.len());
    c.bench_function("periodogram_planned", |b| {
        b.iter(|| plan.table(black_box(&current), dt).unwrap())
    });
    c.bench_function("periodogram_unplanned", |b| {
        b.iter(|| periodogram_of(black_box(&current), dt).unwrap())
    });
    let lockin = LockinConfig::new(9.89, 1.0 / 1.54).unwrap();
    c.bench_function("lockin", |b| b.iter(|| lockin_signal(black_box(&current), dt, &lockin)));
}

fn analytics(c: &mut Criterion) {
    let sm = SpectrumModel::new(build_moment_system(AnalyticParams::from_model(&ac_model()))).unwrap();
    let grid = linear_grid(0.0, 20.0, 1000);
    c.bench_function("analytic_spectrum_1000", |b| {
        b.iter(|| sm.table(black_box(&grid)).unwrap())
    });
}

criterion_group!(benches, steps, signals, analytics);
criterion_main!(benches);
