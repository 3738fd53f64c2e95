mod common;

use common::*;
use gridvolt::contingency::{
    enumerate_n1, extremes, run_contingency, summarize, sweep, ContingencyConfig, ContingencyFilter, ContingencyKind,
    ContingencyResult, ContingencySpec,
};
use gridvolt::model::{BusKind, CaseParts};
use gridvolt::{apply_outage, nr_solve, GridCase, SolverOptions};

fn three_bus() -> GridCase {
    GridCase::new(CaseParts {
        base_mva: 100.0,
        buses: vec![bus(1, BusKind::Slack), bus(2, BusKind::PV), bus(3, BusKind::PQ)],
        branches: vec![line(1, 2, 0.01, 0.1), line(2, 3, 0.01, 0.1), line(1, 3, 0.01, 0.1)],
        generators: vec![gen(1, 0.0, 1.02, -5.0, 5.0), gen(2, 0.3, 1.01, -1.0, 1.0)],
        loads: vec![load(3, 0.5, 0.1)],
        shunts: vec![],
        default_bounds: (0.85, 1.15),
    })
    .unwrap()
}

#[test]
fn enumeration_counts() {
    let c3 = three_bus();
    assert_eq!(enumerate_n1(&c3, ContingencyFilter::All).len(), 4);
    let branches = enumerate_n1(&c3, ContingencyFilter::Branches);
    assert_eq!(branches.len(), 3);
    assert!(branches.iter().all(|s| s.kind == ContingencyKind::BranchOutage));

    let c14 = ieee14();
    let all = enumerate_n1(&c14, ContingencyFilter::All);
    assert_eq!(all.len(), 24);
    assert_eq!(enumerate_n1(&c14, ContingencyFilter::Generators).len(), 4);
    assert!(!all
        .iter()
        .any(|s| s.kind == ContingencyKind::GeneratorOutage && s.element == 1));
}

#[test]
fn outage_flips_status_only() {
    let c3 = three_bus();
    let spec = ContingencySpec::branch(&c3, 0);
    let out = apply_outage(&c3, &spec).unwrap();
    assert_eq!(out.branches().iter().filter(|b| b.status.is_in()).count(), 2);
    assert_eq!(c3.branches().iter().filter(|b| b.status.is_in()).count(), 3);
    assert!(apply_outage(&out, &spec).is_err());
    assert!(apply_outage(&c3, &ContingencySpec::branch(&c3, 17)).is_err());
    assert!(apply_outage(&c3, &ContingencySpec::generator(3)).is_err());
}

#[test]
fn islanding_outage_is_recorded() {
    let case = ieee14();
    // Bus 8 hangs off bus 7 alone.
    let idx = case.branches().iter().position(|b| (b.from, b.to) == (7, 8)).unwrap();
    let r = run_contingency(
        &case,
        &ContingencySpec::branch(&case, idx),
        &case.setpoints(),
        &ContingencyConfig::default(),
    );
    assert!(r.islanded && !r.converged);
}

#[test]
fn light_branch_outage_stays_close_to_base() {
    let case = ieee14();
    let base = nr_solve(&case, &SolverOptions::default()).unwrap();
    let (bmin, bmax) = base.v_range();
    let idx = case.branches().iter().position(|b| (b.from, b.to) == (12, 13)).unwrap();
    let spec = ContingencySpec::branch(&case, idx);
    let r = run_contingency(&case, &spec, &case.setpoints(), &ContingencyConfig::default());
    assert!(r.converged);
    assert!((r.v_min - bmin).abs() < 0.03 * bmin);
    assert!((r.v_max - bmax).abs() < 0.03 * bmax);
    let oracle = dense_polar_oracle(&apply_outage(&case, &spec).unwrap()).unwrap();
    let om: Vec<f64> = oracle.iter().map(|v| v.norm()).collect();
    let (omin, omax) = extremes(&om);
    assert!((r.v_min - omin).abs() < 1e-6 && (r.v_max - omax).abs() < 1e-6);
}

type ResultBits = (String, bool, bool, u64, u64, usize, Vec<u64>);

fn bits(rs: &[ContingencyResult]) -> Vec<ResultBits> {
    rs.iter()
        .map(|r| {
            (
                r.spec.label.clone(),
                r.converged,
                r.islanded,
                r.v_min.to_bits(),
                r.v_max.to_bits(),
                r.iterations,
                r.v_mag.iter().map(|v| v.to_bits()).collect(),
            )
        })
        .collect()
}

#[test]
fn sweep_is_deterministic_and_leaves_base_alone() {
    let case = ieee14();
    let before = case.clone();
    let specs = enumerate_n1(&case, ContingencyFilter::All);
    let cfg = ContingencyConfig::default();
    let serial: Vec<ContingencyResult> = specs
        .iter()
        .map(|s| run_contingency(&case, s, &case.setpoints(), &cfg))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
    let parallel = pool.install(|| sweep(&case, &specs, &case.setpoints(), &cfg));
    let mut reversed_specs = specs.clone();
    reversed_specs.reverse();
    let mut reversed = sweep(&case, &reversed_specs, &case.setpoints(), &cfg);
    reversed.reverse();
    assert_eq!(bits(&serial), bits(&parallel));
    assert_eq!(bits(&serial), bits(&reversed));
    assert_eq!(case, before);

    for r in serial.iter().filter(|r| r.converged) {
        let (lo, hi) = extremes(&r.v_mag);
        assert_eq!((lo.to_bits(), hi.to_bits()), (r.v_min.to_bits(), r.v_max.to_bits()));
        assert!(r.v_min <= r.v_max && r.v_min.is_finite());
    }
    let report = summarize(&serial, 0.01).unwrap();
    assert_eq!(report.total, 24);
    assert_eq!(report.failed, serial.iter().filter(|r| !r.converged).count());
    assert_eq!(report.islanded, 1);
    assert_eq!(report.v_max.total(), report.converged);
}
