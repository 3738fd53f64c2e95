use num_complex::Complex64;
use serde::Serialize;

use super::system::{build_system, SplitCircuitSystem};
use super::{residual, stamps, Workspace};
use crate::error::{Error, Result};
use crate::model::GridCase;
use crate::sparse;

#[derive(Debug, Clone, PartialEq)]
pub enum Init {
    /// `1 + j0` at every bus, `Q` at the middle of its band.
    Flat,
    /// Explicit start vector in the layout of the system being solved.
    Warm(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub delta_v_max: f64,
    pub init: Init,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            tol: 1e-8,
            max_iter: 100,
            delta_v_max: 0.1,
            init: Init::Flat,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "tol must be positive, got {}",
                self.tol
            )));
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidArgument("max_iter must be at least 1".into()));
        }
        if !(self.delta_v_max > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "delta_v_max must be positive, got {}",
                self.delta_v_max
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PowerFlowSolution {
    pub converged: bool,
    pub iterations: usize,
    /// Per bus, zero on de-energized buses.
    pub v: Vec<Complex64>,
    /// Per generator record; out-of-service units report zero.
    pub q_gen: Vec<f64>,
    /// Per generator group, including the slack group.
    pub group_q: Vec<f64>,
    pub residual_norm: f64,
    /// Complex generation at the slack bus.
    pub slack_power: Complex64,
    pub energized: Vec<bool>,
    /// Final iterate in the solver's variable layout.
    #[serde(skip)]
    pub x: Vec<f64>,
}

impl PowerFlowSolution {
    pub fn v_mag(&self) -> Vec<f64> {
        self.v.iter().map(|v| v.norm()).collect()
    }

    /// Minimum and maximum magnitude over energized buses.
    pub fn v_range(&self) -> (f64, f64) {
        self.v
            .iter()
            .zip(&self.energized)
            .filter(|(_, &e)| e)
            .map(|(v, _)| v.norm())
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), m| (lo.min(m), hi.max(m)))
    }
}

pub fn flat_start(sys: &SplitCircuitSystem) -> Vec<f64> {
    let mut x = vec![0.0; sys.n_vars()];
    for b in 0..sys.n_buses() {
        if let Some((r, _)) = sys.voltage_slots(b) {
            x[r] = 1.0;
        }
    }
    for (g, grp) in sys.groups().iter().enumerate() {
        if let Some(q) = sys.q_slot(g) {
            x[q] = grp.q_mid();
        }
    }
    x
}

/// Clips each bus step `(ΔV_R, ΔV_I)` to magnitude `delta_v_max`, scaling
/// both components together. Other entries pass through.
pub fn limit_step(sys: &SplitCircuitSystem, delta: &mut [f64], delta_v_max: f64) {
    for b in 0..sys.n_buses() {
        if let Some((r, i)) = sys.voltage_slots(b) {
            clip_pair(&mut delta[r..=i], delta_v_max);
        }
    }
}

pub(crate) fn clip_pair(pair: &mut [f64], limit: f64) {
    let m = pair[0].hypot(pair[1]);
    if m > limit {
        let k = limit / m;
        pair[0] *= k;
        pair[1] *= k;
    }
}

pub fn nr_solve(case: &GridCase, opts: &SolverOptions) -> Result<PowerFlowSolution> {
    let sys = build_system(case)?;
    solve_system(&sys, 1.0, opts)
}

/// Damped Newton on an already built system whose branch series
/// admittances are multiplied by `scale`.
///
/// A singular Jacobian is an error; running out of iterations is not, and
/// yields the best iterate seen with `converged = false`.
pub fn solve_system(sys: &SplitCircuitSystem, scale: f64, opts: &SolverOptions) -> Result<PowerFlowSolution> {
    opts.validate()?;
    let mut x = match &opts.init {
        Init::Flat => flat_start(sys),
        Init::Warm(x0) => {
            if x0.len() != sys.n_vars() {
                return Err(Error::InvalidArgument(format!(
                    "warm start has {} entries, system has {}",
                    x0.len(),
                    sys.n_vars()
                )));
            }
            x0.clone()
        }
    };
    let mut ws = Workspace::for_system(sys);
    let mut best = (f64::INFINITY, x.clone());
    let mut iterations = 0;
    loop {
        stamps::assemble(sys, &x, scale, &mut ws);
        let norm = residual::max_abs(&ws.residual_at(&x));
        if !norm.is_finite() {
            break;
        }
        if norm < best.0 {
            best = (norm, x.clone());
        }
        if norm <= opts.tol || iterations >= opts.max_iter {
            break;
        }
        let x_new = sparse::solve(&ws.matrix, &ws.rhs, "power-flow Jacobian")?;
        let mut delta: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        limit_step(sys, &mut delta, opts.delta_v_max);
        for (xi, d) in x.iter_mut().zip(&delta) {
            *xi += d;
        }
        iterations += 1;
    }
    let (norm, x) = best;
    log::debug!("power flow: {iterations} iterations, residual {norm:.3e}");
    Ok(extract_solution(sys, x, scale, iterations, norm, norm <= opts.tol))
}

/// Bus voltages of iterate `x`, with the slack voltage filled in.
pub(crate) fn bus_voltages(sys: &SplitCircuitSystem, x: &[f64]) -> Vec<Complex64> {
    (0..sys.n_buses())
        .map(|b| {
            if b == sys.slack() {
                sys.slack_voltage()
            } else if let Some((r, i)) = sys.voltage_slots(b) {
                Complex64::new(x[r], x[i])
            } else {
                Complex64::new(0.0, 0.0)
            }
        })
        .collect()
}

/// Current leaving bus `b` into the network (branches and shunt).
pub(crate) fn network_current(sys: &SplitCircuitSystem, v: &[Complex64], scale: f64, b: usize) -> Complex64 {
    let mut i = sys.shunt[b] * v[b];
    for br in &sys.branches {
        let ys = br.y_series * scale;
        let jb = Complex64::new(0.0, br.half_charging);
        let t = br.tap;
        if br.from == b {
            i += (ys + jb) / (t * t) * v[br.from] - ys / t * v[br.to];
        }
        if br.to == b {
            i += (ys + jb) * v[br.to] - ys / t * v[br.from];
        }
    }
    i
}

/// Splits each group's output over its members in proportion to their
/// reactive bands (equally when the band is empty or unbounded).
pub(crate) fn split_group_q(sys: &SplitCircuitSystem, group_q: &[f64]) -> Vec<f64> {
    let mut q_gen = vec![0.0; sys.n_generators];
    for (grp, &q) in sys.groups().iter().zip(group_q) {
        let width = grp.q_max - grp.q_min;
        for &gi in &grp.members {
            q_gen[gi] = if grp.members.len() == 1 {
                q
            } else if width.is_finite() && width > 0.0 {
                let (lo, hi) = sys.generator_q_bounds[gi];
                lo + (q - grp.q_min) * (hi - lo) / width
            } else {
                q / grp.members.len() as f64
            };
        }
    }
    q_gen
}

pub(crate) fn extract_solution(
    sys: &SplitCircuitSystem,
    x: Vec<f64>,
    scale: f64,
    iterations: usize,
    residual_norm: f64,
    converged: bool,
) -> PowerFlowSolution {
    let v = bus_voltages(sys, &x);
    let s = sys.slack();
    let slack_power = v[s] * network_current(sys, &v, scale, s).conj() + sys.load[s];

    let group_q: Vec<f64> = sys
        .groups()
        .iter()
        .enumerate()
        .map(|(g, grp)| {
            if grp.bus == s {
                slack_power.im
            } else if let Some(q) = sys.q_slot(g) {
                x[q]
            } else {
                grp.q_min
            }
        })
        .collect();
    let q_gen = split_group_q(sys, &group_q);
    PowerFlowSolution {
        converged,
        iterations,
        v,
        q_gen,
        group_q,
        residual_norm,
        slack_power,
        energized: sys.energized().to_vec(),
        x,
    }
}
