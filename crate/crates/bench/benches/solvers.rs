use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use gridvolt::contingency::{enumerate_n1, sweep, ContingencyConfig, ContingencyFilter};
use gridvolt::homotopy::{solve_power_flow, HomotopyMode, HomotopySettings};
use gridvolt::limiter::LimiterConfig;
use gridvolt::opt::{redispatch, RedispatchConfig};
use gridvolt::{nr_solve, SolverOptions};
use gridvolt_bench::{load, stressed14};

fn power_flow(c: &mut Criterion) {
    let opts = SolverOptions::default();
    let mut g = c.benchmark_group("power_flow");
    for name in ["case9.m", "ieee14.m"] {
        let case = load(name);
        g.bench_function(name, |b| b.iter(|| nr_solve(black_box(&case), &opts).unwrap()));
    }
    let case = load("ieee14.m");
    let traced = HomotopySettings {
        mode: HomotopyMode::On,
        ..HomotopySettings::default()
    };
    g.bench_function("ieee14.m continuation", |b| {
        b.iter(|| solve_power_flow(black_box(&case), &opts, &traced).unwrap())
    });
    g.finish();
}

fn redispatch_stressed(c: &mut Criterion) {
    let case = stressed14();
    let config = RedispatchConfig {
        limiters: LimiterConfig {
            limit_slack_q: true,
            ..LimiterConfig::default()
        },
        ..RedispatchConfig::default()
    };
    c.bench_function("redispatch stressed ieee14", |b| {
        b.iter(|| redispatch(black_box(&case), &config).unwrap())
    });
}

fn n1_sweep(c: &mut Criterion) {
    let case = stressed14();
    let specs = enumerate_n1(&case, ContingencyFilter::All);
    let sp = case.setpoints();
    let cfg = ContingencyConfig::default();
    c.bench_function("n-1 sweep ieee14", |b| {
        b.iter(|| sweep(black_box(&case), &specs, &sp, &cfg))
    });
}

criterion_group!(benches, power_flow, redispatch_stressed, n1_sweep);
criterion_main!(benches);
