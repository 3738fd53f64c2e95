#![allow(dead_code, clippy::needless_range_loop, clippy::type_complexity)]

use std::path::PathBuf;

use gridvolt::model::{Branch, Bus, BusKind, CaseParts, Generator, Load, Shunt, Status};
use gridvolt::{parse_case, CaseFormat, GridCase};
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;

pub fn case_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../cases").join(name)
}

pub fn ieee14() -> GridCase {
    parse_case(case_path("ieee14.m"), CaseFormat::MatpowerText).unwrap()
}

pub fn case9() -> GridCase {
    parse_case(case_path("case9.m"), CaseFormat::MatpowerText).unwrap()
}

/// 14-bus case with bus 6 pushed to 1.30 pu.
pub fn doctored14() -> GridCase {
    ieee14().with_setpoints(&[(6, 1.30)]).unwrap()
}

pub fn bus(id: u32, kind: BusKind) -> Bus {
    Bus {
        id,
        kind,
        base_kv: 330.0,
        v_init_mag: 1.0,
        v_init_ang: 0.0,
        v_soft_min: 0.85,
        v_soft_max: 1.15,
    }
}

pub fn line(from: u32, to: u32, r: f64, x: f64) -> Branch {
    Branch {
        from,
        to,
        r,
        x,
        b_sh: 0.0,
        tap: 1.0,
        status: Status::In,
    }
}

pub fn load(bus: u32, p: f64, q: f64) -> Load {
    Load {
        bus,
        p,
        q,
        status: Status::In,
    }
}

pub fn gen(bus: u32, p_set: f64, v_set: f64, q_min: f64, q_max: f64) -> Generator {
    Generator {
        bus,
        p_set,
        v_set_init: v_set,
        q_min,
        q_max,
        status: Status::In,
    }
}

pub fn two_bus(p: f64, q: f64, x: f64) -> GridCase {
    GridCase::new(CaseParts {
        base_mva: 100.0,
        buses: vec![bus(1, BusKind::Slack), bus(2, BusKind::PQ)],
        branches: vec![line(1, 2, 0.0, x)],
        generators: vec![gen(1, 0.0, 1.0, -10.0, 10.0)],
        loads: vec![load(2, p, q)],
        shunts: vec![],
        default_bounds: (0.85, 1.15),
    })
    .unwrap()
}

/// Connected network with 2 to 4 buses, random impedances and loads, an
/// optional PV bus, tap and shunt.
pub fn random_network(rng: &mut impl Rng) -> GridCase {
    let n: u32 = rng.gen_range(2..=4);
    let pv = n >= 3 && rng.gen_bool(0.5);
    let mut buses = vec![bus(1, BusKind::Slack)];
    for id in 2..=n {
        buses.push(bus(id, if pv && id == 2 { BusKind::PV } else { BusKind::PQ }));
    }
    let mut branches = Vec::new();
    for id in 2..=n {
        let to = rng.gen_range(1..id);
        let mut br = line(to, id, rng.gen_range(0.005..0.05), rng.gen_range(0.05..0.3));
        br.b_sh = rng.gen_range(0.0..0.05);
        if rng.gen_bool(0.25) {
            br.tap = rng.gen_range(0.95..1.05);
        }
        branches.push(br);
    }
    if n >= 3 && rng.gen_bool(0.5) {
        branches.push(line(n, 1, rng.gen_range(0.005..0.05), rng.gen_range(0.05..0.3)));
    }
    let mut generators = vec![gen(1, 0.0, rng.gen_range(0.98..1.06), -5.0, 5.0)];
    if pv {
        generators.push(gen(2, rng.gen_range(0.0..0.4), rng.gen_range(0.98..1.05), -2.0, 2.0));
    }
    let mut loads = Vec::new();
    for id in 2..=n {
        if !(pv && id == 2) || rng.gen_bool(0.5) {
            loads.push(load(id, rng.gen_range(0.0..0.5), rng.gen_range(-0.1..0.2)));
        }
    }
    let shunts = if rng.gen_bool(0.3) {
        vec![Shunt {
            bus: n,
            g: 0.0,
            b: rng.gen_range(-0.05..0.1),
            status: Status::In,
        }]
    } else {
        vec![]
    };
    GridCase::new(CaseParts {
        base_mva: 100.0,
        buses,
        branches,
        generators,
        loads,
        shunts,
        default_bounds: (0.85, 1.15),
    })
    .unwrap()
}

/// Dense bus admittance matrix, π model with the tap on the from side.
pub fn y_bus(case: &GridCase) -> DMatrix<Complex64> {
    let n = case.buses().len();
    let mut y = DMatrix::from_element(n, n, Complex64::new(0.0, 0.0));
    for br in case.branches().iter().filter(|b| b.status.is_in()) {
        let f = case.bus_index(br.from).unwrap();
        let t = case.bus_index(br.to).unwrap();
        let ys = Complex64::new(1.0, 0.0) / Complex64::new(br.r, br.x);
        let bc = Complex64::new(0.0, br.b_sh / 2.0);
        let tap = br.tap;
        y[(f, f)] += (ys + bc) / (tap * tap);
        y[(t, t)] += ys + bc;
        y[(f, t)] -= ys / tap;
        y[(t, f)] -= ys / tap;
    }
    for s in case.shunts().iter().filter(|s| s.status.is_in()) {
        let b = case.bus_index(s.bus).unwrap();
        y[(b, b)] += Complex64::new(s.g, s.b);
    }
    y
}

/// Net scheduled injection per bus (generation minus load) and the
/// setpoint magnitude at generator buses.
fn schedule(case: &GridCase) -> (Vec<Complex64>, Vec<Option<f64>>) {
    let n = case.buses().len();
    let mut s = vec![Complex64::new(0.0, 0.0); n];
    let mut vset = vec![None; n];
    for l in case.loads().iter().filter(|l| l.status.is_in()) {
        s[case.bus_index(l.bus).unwrap()] -= Complex64::new(l.p, l.q);
    }
    for g in case.generators().iter().filter(|g| g.status.is_in()) {
        let b = case.bus_index(g.bus).unwrap();
        s[b] += g.p_set;
        vset[b] = Some(g.v_set_init);
    }
    (s, vset)
}

/// Independent polar Newton solver: unknowns are angles at non-slack buses
/// and magnitudes at PQ buses, Jacobian by central differences, dense LU.
/// Assumes every bus is energized.
pub fn dense_polar_oracle(case: &GridCase) -> Option<Vec<Complex64>> {
    let n = case.buses().len();
    let y = y_bus(case);
    let (sched, vset) = schedule(case);
    let slack = case.slack_index();
    let pq: Vec<usize> = (0..n).filter(|&b| case.buses()[b].kind == BusKind::PQ).collect();
    let ang: Vec<usize> = (0..n).filter(|&b| b != slack).collect();
    let mut mag = vec![1.0; n];
    let mut theta = vec![0.0; n];
    for b in 0..n {
        if let Some(v) = vset[b] {
            mag[b] = v;
        }
    }
    theta[slack] = case.buses()[slack].v_init_ang;
    let nx = ang.len() + pq.len();
    let unpack = |x: &DVector<f64>, mag: &mut Vec<f64>, theta: &mut Vec<f64>| {
        for (k, &b) in ang.iter().enumerate() {
            theta[b] = x[k];
        }
        for (k, &b) in pq.iter().enumerate() {
            mag[b] = x[ang.len() + k];
        }
    };
    let mismatch = |mag: &[f64], theta: &[f64]| -> DVector<f64> {
        let v: Vec<Complex64> = (0..n).map(|b| Complex64::from_polar(mag[b], theta[b])).collect();
        let mut f = DVector::zeros(nx);
        for (k, &b) in ang.iter().enumerate() {
            let i: Complex64 = (0..n).map(|j| y[(b, j)] * v[j]).sum();
            let s = v[b] * i.conj() - sched[b];
            f[k] = s.re;
            if let Some(m) = pq.iter().position(|&p| p == b) {
                f[ang.len() + m] = s.im;
            }
        }
        f
    };
    let mut x = DVector::zeros(nx);
    for (k, &b) in ang.iter().enumerate() {
        x[k] = theta[b];
    }
    for (k, &b) in pq.iter().enumerate() {
        x[ang.len() + k] = mag[b];
    }
    for _ in 0..50 {
        unpack(&x, &mut mag, &mut theta);
        let f = mismatch(&mag, &theta);
        if f.amax() < 1e-13 {
            return Some((0..n).map(|b| Complex64::from_polar(mag[b], theta[b])).collect());
        }
        let h = 1e-7;
        let mut jac = DMatrix::zeros(nx, nx);
        for c in 0..nx {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[c] += h;
            xm[c] -= h;
            let (mut mp, mut tp) = (mag.clone(), theta.clone());
            unpack(&xp, &mut mp, &mut tp);
            let fp = mismatch(&mp, &tp);
            let (mut mm, mut tm) = (mag.clone(), theta.clone());
            unpack(&xm, &mut mm, &mut tm);
            let fm = mismatch(&mm, &tm);
            jac.set_column(c, &((fp - fm) / (2.0 * h)));
        }
        let dx = jac.lu().solve(&(-f))?;
        x += dx;
        if !x.iter().all(|v| v.is_finite()) {
            return None;
        }
    }
    None
}

/// `V2 <- V1 - z * conj(S / V2)` for a single-line feeder.
pub fn fixed_point_two_bus(v1: Complex64, z: Complex64, s_load: Complex64) -> Complex64 {
    let mut v2 = v1;
    for _ in 0..10_000 {
        let next = v1 - z * (s_load / v2).conj();
        if (next - v2).norm() < 1e-15 {
            return next;
        }
        v2 = next;
    }
    v2
}

/// Central difference derivative.
pub fn fd(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

/// Relative error with an absolute floor for values near zero.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

use gridvolt::limiter::{Hardness, LimitTarget};
use gridvolt::opt::{lagrangian_residual, lagrangian_value, KKTIterate, OptimizationProblem};

/// Warm start perturbed at random, hard-limited values kept strictly
/// inside their bands, duals drawn from [-1, 1].
pub fn random_interior_iterate(p: &OptimizationProblem, start: &KKTIterate, rng: &mut impl Rng) -> KKTIterate {
    let mut it = start.clone();
    for x in it.primal.iter_mut() {
        *x += rng.gen_range(-0.05..0.05);
    }
    for (k, lim) in p.limiters().iter().enumerate() {
        let t = p.layout().target_slot(k);
        if lim.hardness == Hardness::Hard {
            let w = lim.hi - lim.lo;
            it.primal[t] = rng.gen_range(lim.lo + 0.05 * w..lim.hi - 0.05 * w);
        } else if let LimitTarget::Voltage { .. } = lim.target {
            it.primal[t] = rng.gen_range(0.8..1.2);
        }
        it.primal[p.layout().s_slot(k)] = rng.gen_range(-1.0..1.0);
    }
    for l in it.dual.iter_mut() {
        *l = rng.gen_range(-1.0..1.0);
    }
    it
}

/// Largest relative error between the analytic `(∂L/∂x, ∂L/∂λ)` and
/// central differences of the scalar Lagrangian.
pub fn lagrangian_fd_error(p: &OptimizationProblem, it: &KKTIterate) -> f64 {
    let (stat, feas) = lagrangian_residual(p, it).unwrap();
    let h = 1e-6;
    let mut worst = 0.0f64;
    for c in 0..it.primal.len() {
        let mut a = it.clone();
        let mut b = it.clone();
        a.primal[c] += h;
        b.primal[c] -= h;
        let d = (lagrangian_value(p, &a).unwrap() - lagrangian_value(p, &b).unwrap()) / (2.0 * h);
        worst = worst.max(rel_err(stat[c], d));
    }
    for r in 0..it.dual.len() {
        let mut a = it.clone();
        let mut b = it.clone();
        a.dual[r] += h;
        b.dual[r] -= h;
        let d = (lagrangian_value(p, &a).unwrap() - lagrangian_value(p, &b).unwrap()) / (2.0 * h);
        worst = worst.max(rel_err(feas[r], d));
    }
    worst
}

/// Largest relative error of `(ds, d2s)` against central differences of
/// `s` and `ds`, over `n` random points from `sample`.
pub fn diode_fd_error(f: impl Fn(f64) -> (f64, f64, f64), mut sample: impl FnMut() -> f64, n: usize) -> f64 {
    let h = 1e-6;
    let mut worst = 0.0f64;
    for _ in 0..n {
        let v = sample();
        let (_, ds, d2s) = f(v);
        let fd1 = (f(v + h).0 - f(v - h).0) / (2.0 * h);
        let fd2 = (f(v + h).1 - f(v - h).1) / (2.0 * h);
        worst = worst.max(rel_err(ds, fd1)).max(rel_err(d2s, fd2));
    }
    worst
}
