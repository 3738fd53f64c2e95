use std::sync::atomic::{AtomicUsize, Ordering};

use num_complex::Complex64;

use super::{IterateRecord, KKTIterate, OptimizationProblem, SetpointRef};
use crate::error::{Error, Result};
use crate::limiter::Hardness;
use crate::pf::{injection, injection_hessian};
use crate::sparse::{self, StampMatrix};

static HARD_BREACHES: AtomicUsize = AtomicUsize::new(0);

/// Accepted KKT iterates, process-wide, at which a hard-limited value sat
/// on or outside its bound.
pub fn hard_limit_breaches() -> usize {
    HARD_BREACHES.load(Ordering::Relaxed)
}

/// One constraint row: value, gradient and (full, symmetric) Hessian.
#[derive(Default)]
struct Row {
    value: f64,
    grad: Vec<(usize, f64)>,
    hess: Vec<(usize, usize, f64)>,
}

impl Row {
    fn clear(&mut self) {
        self.value = 0.0;
        self.grad.clear();
        self.hess.clear();
    }
    fn h(&mut self, i: usize, j: usize, v: f64) {
        if v != 0.0 {
            self.hess.push((i, j, v));
        }
    }
}

/// Per-bus admittance adjacency `(column bus, Y_bj)` at a branch scale.
fn admittance_rows(p: &OptimizationProblem, scale: f64) -> Vec<Vec<(usize, Complex64)>> {
    let sys = &p.sys;
    let mut rows: Vec<Vec<(usize, Complex64)>> = vec![Vec::new(); sys.n_buses()];
    for (b, &y) in sys.shunt.iter().enumerate() {
        if y != Complex64::new(0.0, 0.0) {
            rows[b].push((b, y));
        }
    }
    for br in &sys.branches {
        let ys = br.y_series * scale;
        let jb = Complex64::new(0.0, br.half_charging);
        let t = br.tap;
        rows[br.from].push((br.from, (ys + jb) / (t * t)));
        rows[br.from].push((br.to, -ys / t));
        rows[br.to].push((br.from, -ys / t));
        rows[br.to].push((br.to, ys + jb));
    }
    rows
}

fn setpoint(x: &[f64], r: SetpointRef) -> f64 {
    match r {
        SetpointRef::Var(s) => x[s],
        SetpointRef::Param(v) => v,
    }
}

/// Visits every constraint row at `x`. Hard limiters evaluated outside
/// their band raise a limiter fault.
fn for_each_constraint(p: &OptimizationProblem, x: &[f64], scale: f64, mut f: impl FnMut(usize, &Row)) -> Result<()> {
    let l = &p.layout;
    let sys = &p.sys;
    let yrows = admittance_rows(p, scale);
    let mut row = Row::default();
    let mut row_i = Row::default();

    for b in 0..sys.n_buses() {
        let Some(kr) = l.kcl_row[b] else { continue };
        let (vr, vi) = l.voltage_slots(b).unwrap();
        row.clear();
        row_i.clear();
        for &(j, y) in &yrows[b] {
            let (cr, ci) = l.voltage_slots(j).unwrap();
            let vj = Complex64::new(x[cr], x[ci]);
            let i = y * vj;
            row.value += i.re;
            row_i.value += i.im;
            row.grad.push((cr, y.re));
            row.grad.push((ci, -y.im));
            row_i.grad.push((cr, y.im));
            row_i.grad.push((ci, y.re));
        }
        // Consumed power, with any generator variables entering negatively.
        let fixed = sys.fixed_consumption(b);
        let (mut pc, mut qc) = (fixed.re, fixed.im);
        let mut p_var = None;
        let mut q_var = None;
        if b == sys.slack() {
            pc -= x[l.p_slack];
            qc -= x[l.q_slack];
            p_var = Some(l.p_slack);
            q_var = Some(l.q_slack);
        } else if let Some(g) = sys.group_of_bus[b] {
            if let Some(qs) = l.q_slot[g] {
                qc -= x[qs];
                q_var = Some(qs);
            }
        }
        let (a, c) = (x[vr], x[vi]);
        let st = injection(a, c, pc, qc);
        let hs = injection_hessian(a, c, pc, qc);
        let idx = [Some(vr), Some(vi), p_var, q_var];
        let sign = [1.0, 1.0, -1.0, -1.0];
        for (k, r) in [&mut row, &mut row_i].into_iter().enumerate() {
            r.value += st.current[k];
            r.grad.push((vr, st.dv[k][0]));
            r.grad.push((vi, st.dv[k][1]));
            if let Some(s) = p_var {
                r.grad.push((s, -st.dp[k]));
            }
            if let Some(s) = q_var {
                r.grad.push((s, -st.dq[k]));
            }
            for i in 0..4 {
                for j in 0..4 {
                    if let (Some(si), Some(sj)) = (idx[i], idx[j]) {
                        r.h(si, sj, sign[i] * sign[j] * hs.h[k][i][j]);
                    }
                }
            }
        }
        f(kr, &row);
        f(kr + 1, &row_i);
    }

    // Angle reference at the slack.
    {
        let (vr, vi) = l.voltage_slots(sys.slack()).unwrap();
        let th = sys.slack_voltage().arg();
        row.clear();
        row.value = x[vi] * th.cos() - x[vr] * th.sin();
        row.grad.push((vi, th.cos()));
        row.grad.push((vr, -th.sin()));
        f(l.angle_row, &row);
    }

    for m in &l.magnitude_rows {
        let (vr, vi) = l.voltage_slots(m.bus).unwrap();
        let vs = setpoint(x, m.v_set);
        row.clear();
        row.value = vs * vs - x[vr] * x[vr] - x[vi] * x[vi];
        if let SetpointRef::Var(s) = m.v_set {
            row.grad.push((s, 2.0 * vs));
            row.h(s, s, 2.0);
        }
        row.grad.push((vr, -2.0 * x[vr]));
        row.grad.push((vi, -2.0 * x[vi]));
        row.h(vr, vr, -2.0);
        row.h(vi, vi, -2.0);
        f(m.row, &row);
    }

    for (k, lim) in p.limiters.iter().enumerate() {
        let t = l.target_slot[k];
        let s = l.s_slot[k];
        let (d, dd, ddd) = lim.current(x[t])?;
        row.clear();
        row.value = x[s] - d;
        row.grad.push((s, 1.0));
        row.grad.push((t, -dd));
        row.h(t, t, -ddd);
        f(l.limiter_row[k], &row);
    }
    Ok(())
}

fn objective(p: &OptimizationProblem, x: &[f64]) -> f64 {
    p.layout
        .s_slot
        .iter()
        .zip(&p.weights)
        .map(|(&s, w)| w * x[s] * x[s])
        .sum()
}

/// Scalar Lagrangian `Σ w s² + λᵀ c(x)` at branch scale 1.
pub fn lagrangian_value(p: &OptimizationProblem, it: &KKTIterate) -> Result<f64> {
    let mut l = objective(p, &it.primal);
    for_each_constraint(p, &it.primal, 1.0, |r, row| l += it.dual[r] * row.value)?;
    Ok(l)
}

/// `(∂L/∂x, ∂L/∂λ)`: stationarity and constraint residuals.
pub fn lagrangian_residual(p: &OptimizationProblem, it: &KKTIterate) -> Result<(Vec<f64>, Vec<f64>)> {
    residual_scaled(p, it, 1.0)
}

pub(crate) fn residual_scaled(p: &OptimizationProblem, it: &KKTIterate, scale: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    let x = &it.primal;
    let mut stat = vec![0.0; p.layout.n_primal];
    for (&s, w) in p.layout.s_slot.iter().zip(&p.weights) {
        stat[s] += 2.0 * w * x[s];
    }
    let mut feas = vec![0.0; p.layout.n_dual];
    for_each_constraint(p, x, scale, |r, row| {
        feas[r] = row.value;
        let lam = it.dual[r];
        for &(c, g) in &row.grad {
            stat[c] += lam * g;
        }
    })?;
    Ok((stat, feas))
}

/// Assembled `[[H, Jᵀ], [J, 0]]`.
pub struct KktMatrix {
    pub matrix: StampMatrix,
}

pub(crate) fn assemble_kkt(p: &OptimizationProblem, it: &KKTIterate, scale: f64) -> Result<KktMatrix> {
    let n = p.layout.n_primal;
    let mut m = StampMatrix::growable(n + p.layout.n_dual);
    for (&s, w) in p.layout.s_slot.iter().zip(&p.weights) {
        m.add(s, s, 2.0 * w);
    }
    for_each_constraint(p, &it.primal, scale, |r, row| {
        let lam = it.dual[r];
        for &(c, g) in &row.grad {
            m.add(n + r, c, g);
            m.add(c, n + r, g);
        }
        if lam != 0.0 {
            for &(i, j, h) in &row.hess {
                m.add(i, j, lam * h);
            }
        }
    })?;
    // Keep every diagonal in the pattern so the factorization sees it.
    for d in 0..n + p.layout.n_dual {
        m.add(d, d, 0.0);
    }
    Ok(KktMatrix { matrix: m })
}

/// Damps a KKT Newton step in place.
///
/// Bus voltage pairs and `V_SET` entries are clipped to `delta_v_max`; a
/// hard-limited value whose step would reach or cross a bound instead moves
/// 95% of the remaining gap; the dual block is scaled down to the
/// configured ∞-norm cap.
pub fn limit_kkt_step(p: &OptimizationProblem, it: &KKTIterate, delta: &mut [f64]) {
    let l = &p.layout;
    let dv = p.options.solver.delta_v_max;
    for b in 0..l.v_slot.len() {
        if let Some((r, i)) = l.voltage_slots(b) {
            crate::pf::clip_pair(&mut delta[r..=i], dv);
        }
    }
    for s in l.vset_slot.iter().flatten() {
        delta[*s] = delta[*s].clamp(-dv, dv);
    }
    for (k, lim) in p.limiters.iter().enumerate() {
        if lim.hardness != Hardness::Hard {
            continue;
        }
        let t = l.target_slot[k];
        let q = it.primal[t];
        let next = q + delta[t];
        if next >= lim.hi {
            delta[t] = 0.95 * (lim.hi - q);
        } else if next <= lim.lo {
            delta[t] = 0.95 * (lim.lo - q);
        }
    }
    let duals = &mut delta[l.n_primal..];
    let norm = duals.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if norm > p.options.dual_step_cap {
        let k = p.options.dual_step_cap / norm;
        duals.iter_mut().for_each(|v| *v *= k);
    }
}

pub(crate) fn hard_margin(p: &OptimizationProblem, x: &[f64]) -> f64 {
    p.limiters
        .iter()
        .enumerate()
        .filter(|(_, l)| l.hardness == Hardness::Hard)
        .map(|(k, l)| {
            let q = x[p.layout.target_slot[k]];
            (q - l.lo).min(l.hi - q) / (l.hi - l.lo)
        })
        .fold(f64::INFINITY, f64::min)
}

fn max_abs2(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .chain(b)
        .fold(0.0f64, |m, v| if v.is_nan() { f64::NAN } else { m.max(v.abs()) })
}

pub(crate) struct KktOutcome {
    pub iterate: KKTIterate,
    pub converged: bool,
    pub residual: f64,
    pub iterations: usize,
    pub trace: Vec<IterateRecord>,
}

/// Newton iteration on the KKT conditions at branch scale `scale`.
pub(crate) fn kkt_iterate(p: &OptimizationProblem, start: KKTIterate, scale: f64, gamma: f64) -> Result<KktOutcome> {
    let opts = &p.options.solver;
    let n = p.layout.n_primal;
    let mut it = start;
    let mut trace = Vec::new();
    let mut best: Option<(f64, KKTIterate)> = None;
    let mut iterations = 0;
    loop {
        let (stat, feas) = residual_scaled(p, &it, scale)?;
        let norm = max_abs2(&stat, &feas);
        let margin = hard_margin(p, &it.primal);
        if margin <= 0.0 {
            HARD_BREACHES.fetch_add(1, Ordering::Relaxed);
        }
        trace.push(IterateRecord {
            iteration: iterations,
            gamma,
            residual: norm,
            objective: objective(p, &it.primal),
            hard_margin: margin,
        });
        if !norm.is_finite() {
            break;
        }
        if best.as_ref().is_none_or(|(b, _)| norm < *b) {
            best = Some((norm, it.clone()));
        }
        if norm <= opts.tol || iterations >= opts.max_iter {
            break;
        }
        let mut rhs: Vec<f64> = stat.iter().chain(&feas).map(|v| -v).collect();
        let kkt = assemble_kkt(p, &it, scale)?;
        let step = match sparse::solve(&kkt.matrix, &rhs, "KKT") {
            Ok(s) => s,
            Err(Error::Singular { .. }) if iterations == 0 => {
                log::debug!("singular first KKT matrix, retrying with jittered duals");
                it.dual.iter_mut().for_each(|v| *v += 1e-6);
                let (stat, feas) = residual_scaled(p, &it, scale)?;
                rhs = stat.iter().chain(&feas).map(|v| -v).collect();
                let kkt = assemble_kkt(p, &it, scale)?;
                sparse::solve(&kkt.matrix, &rhs, "KKT")?
            }
            Err(e) => return Err(e),
        };
        let mut delta = step;
        limit_kkt_step(p, &it, &mut delta);
        for (x, d) in it.primal.iter_mut().zip(&delta[..n]) {
            *x += d;
        }
        for (l, d) in it.dual.iter_mut().zip(&delta[n..]) {
            *l += d;
        }
        iterations += 1;
    }
    let (residual, iterate) = best.unwrap_or((f64::NAN, it));
    Ok(KktOutcome {
        converged: residual <= opts.tol,
        iterate,
        residual,
        iterations,
        trace,
    })
}

/// Solves the KKT system from `start` on the true network.
pub fn kkt_newton_solve(p: &OptimizationProblem, start: &KKTIterate) -> Result<super::RedispatchResult> {
    let out = kkt_iterate(p, start.clone(), 1.0, 0.0)?;
    Ok(super::redispatch::finish(p, out, false))
}
