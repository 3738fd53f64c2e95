use num_complex::Complex64;
use serde::Serialize;

use super::kkt::{kkt_iterate, residual_scaled, KktOutcome};
use super::{
    formulate, IterateRecord, KKTIterate, OptimizationProblem, RedispatchOptions, RedispatchResult, SetpointRef,
};
use crate::error::{Error, Result};
use crate::homotopy::{self, continuation_solve, ContinuationProblem, HomotopyMode, HomotopySettings};
use crate::limiter::{attach_limiters, Hardness, LimitTarget, LimiterConfig, LimiterState};
use crate::model::GridCase;
use crate::pf::{self, solve_system, Init, PowerFlowSolution, SolverOptions};

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RedispatchConfig {
    pub limiters: LimiterConfig,
    pub options: RedispatchOptions,
    /// Options of the warm-start power flow.
    pub power_flow: SolverOptions,
}

/// Starting KKT iterate from a power-flow solution of the same network.
///
/// Hard-limited values outside their band are projected inside it, each
/// `s` is set to its diode current, and the limiter duals are chosen so
/// that the `s` stationarity rows vanish. Remaining duals start at zero.
pub fn warm_start(p: &OptimizationProblem, pf: &PowerFlowSolution) -> Result<KKTIterate> {
    let l = &p.layout;
    let sys = &p.sys;
    if pf.v.len() != sys.n_buses() {
        return Err(Error::InvalidArgument("power-flow solution is for another case".into()));
    }
    let mut x = vec![0.0; l.n_primal];
    for b in 0..sys.n_buses() {
        if let Some((r, i)) = l.voltage_slots(b) {
            x[r] = pf.v[b].re;
            x[i] = pf.v[b].im;
        }
    }
    x[l.p_slack] = pf.slack_power.re;
    x[l.q_slack] = pf.slack_power.im;
    for (g, slot) in l.q_slot.iter().enumerate() {
        if let Some(s) = slot {
            x[*s] = pf.group_q[g];
        }
    }
    for m in &l.magnitude_rows {
        if let SetpointRef::Var(s) = m.v_set {
            x[s] = if m.auxiliary {
                pf.v[m.bus].norm()
            } else {
                super::regulated_setpoint(sys, m.bus)
            };
        }
    }
    let margin = p.options.q_projection_margin.clamp(1e-9, 0.5);
    let mut dual = vec![0.0; l.n_dual];
    for (k, lim) in p.limiters.iter().enumerate() {
        let t = l.target_slot[k];
        if lim.hardness == Hardness::Hard && !(x[t] > lim.lo && x[t] < lim.hi) {
            let w = lim.hi - lim.lo;
            let projected = x[t].clamp(lim.lo + margin * w, lim.hi - margin * w);
            log::debug!(
                "warm start: Q {} outside ({}, {}), projected to {projected}",
                x[t],
                lim.lo,
                lim.hi
            );
            x[t] = projected;
        }
        let s = lim.current(x[t])?.0;
        x[l.s_slot[k]] = s;
        dual[l.limiter_row[k]] = -2.0 * p.weights[k] * s;
    }
    Ok(KKTIterate { primal: x, dual })
}

/// Power-flow view of a KKT iterate.
pub(crate) fn solution_of(
    p: &OptimizationProblem,
    it: &KKTIterate,
    scale: f64,
    converged: bool,
    iterations: usize,
) -> Result<PowerFlowSolution> {
    let l = &p.layout;
    let sys = &p.sys;
    let x = &it.primal;
    let v: Vec<Complex64> = (0..sys.n_buses())
        .map(|b| match l.voltage_slots(b) {
            Some((r, i)) => Complex64::new(x[r], x[i]),
            None => Complex64::new(0.0, 0.0),
        })
        .collect();
    let group_q: Vec<f64> = sys
        .groups()
        .iter()
        .enumerate()
        .map(|(g, grp)| l.q_slot[g].map_or(grp.q_min, |s| x[s]))
        .collect();
    let (_, feas) = residual_scaled(p, it, scale)?;
    let kcl = l
        .kcl_row
        .iter()
        .flatten()
        .flat_map(|&r| [feas[r], feas[r + 1]])
        .fold(0.0f64, |m, v| m.max(v.abs()));
    Ok(PowerFlowSolution {
        converged,
        iterations,
        q_gen: pf::split_group_q(sys, &group_q),
        group_q,
        v,
        residual_norm: kcl,
        slack_power: Complex64::new(x[l.p_slack], x[l.q_slack]),
        energized: sys.energized().to_vec(),
        x: Vec::new(),
    })
}

pub(crate) fn setpoints_of(p: &OptimizationProblem, x: &[f64]) -> Vec<(u32, f64)> {
    let sys = &p.sys;
    sys.groups()
        .iter()
        .map(|grp| {
            let id = sys.bus_ids[grp.bus];
            let v = match p.layout.vset_slot[grp.bus] {
                Some(s) => x[s],
                None => grp.v_set,
            };
            (id, v)
        })
        .collect()
}

pub(crate) fn finish(p: &OptimizationProblem, out: KktOutcome, used_homotopy: bool) -> RedispatchResult {
    let x = &out.iterate.primal;
    let objective_value = p
        .layout
        .s_slot
        .iter()
        .zip(&p.weights)
        .map(|(&s, w)| w * x[s] * x[s])
        .sum();
    let solution = solution_of(p, &out.iterate, 1.0, out.converged, out.iterations).unwrap_or_else(|e| {
        log::warn!("final iterate could not be evaluated: {e}");
        PowerFlowSolution {
            converged: false,
            iterations: out.iterations,
            v: vec![],
            q_gen: vec![],
            group_q: vec![],
            residual_norm: f64::NAN,
            slack_power: Complex64::new(f64::NAN, f64::NAN),
            energized: vec![],
            x: vec![],
        }
    });
    RedispatchResult {
        converged: out.converged,
        v_set: setpoints_of(p, x),
        solution,
        kkt_residual: out.residual,
        objective_value,
        iterations: out.iterations,
        used_homotopy,
        trace: out.trace,
        iterate: out.iterate,
    }
}

struct KktContinuation<'a> {
    problem: &'a OptimizationProblem,
    power_flow: SolverOptions,
    beta: f64,
}

struct LevelState {
    outcome: KktOutcome,
    v: Vec<Complex64>,
}

impl ContinuationProblem for KktContinuation<'_> {
    type State = LevelState;

    fn solve_level(&mut self, gamma: f64, warm: Option<&LevelState>) -> Result<Option<LevelState>> {
        let p = self.problem;
        let scale = 1.0 + gamma * self.beta;
        let (start, mut trace): (KKTIterate, Vec<IterateRecord>) = match warm {
            Some(w) => (w.outcome.iterate.clone(), w.outcome.trace.clone()),
            None => {
                let opts = SolverOptions {
                    init: Init::Flat,
                    ..self.power_flow.clone()
                };
                let pf = solve_system(&p.sys, scale, &opts)?;
                if !pf.converged {
                    return Ok(None);
                }
                (warm_start(p, &pf)?, Vec::new())
            }
        };
        let mut out = kkt_iterate(p, start, scale, gamma)?;
        if !out.converged {
            return Ok(None);
        }
        let v = level_voltages(p, &out.iterate);
        trace.append(&mut out.trace);
        out.trace = trace;
        Ok(Some(LevelState { outcome: out, v }))
    }

    fn voltage_change(&self, from: &LevelState, to: &LevelState) -> f64 {
        homotopy::max_voltage_change(&from.v, &to.v)
    }
}

fn level_voltages(p: &OptimizationProblem, it: &KKTIterate) -> Vec<Complex64> {
    (0..p.sys.n_buses())
        .map(|b| match p.layout.voltage_slots(b) {
            Some((r, i)) => Complex64::new(it.primal[r], it.primal[i]),
            None => Complex64::new(0.0, 0.0),
        })
        .collect()
}

fn continuation_redispatch(p: &OptimizationProblem, power_flow: &SolverOptions) -> Result<RedispatchResult> {
    let hs = &p.options.homotopy;
    let mut cont = KktContinuation {
        problem: p,
        power_flow: power_flow.clone(),
        beta: hs.schedule.beta,
    };
    let (state, _) = continuation_solve(&mut cont, &hs.schedule, p.options.solver.delta_v_max)?;
    Ok(finish(p, state.outcome, true))
}

/// Attaches limiters, warm-starts from power flow and solves the KKT
/// system, falling back to continuation according to the homotopy mode.
pub fn redispatch(case: &GridCase, config: &RedispatchConfig) -> Result<RedispatchResult> {
    config.limiters.validate()?;
    let limiters = attach_limiters(case, &config.limiters);
    let p = formulate(case, limiters, config.options.clone())?;
    solve_problem(&p, &config.power_flow)
}

pub fn solve_problem(p: &OptimizationProblem, power_flow: &SolverOptions) -> Result<RedispatchResult> {
    let mode = p.options.homotopy.mode;
    if mode == HomotopyMode::On {
        return continuation_redispatch(p, power_flow);
    }
    let pf_settings = HomotopySettings {
        mode,
        schedule: p.options.homotopy.schedule,
    };
    let pf = homotopy::solve_power_flow_system(&p.sys, power_flow, &pf_settings)?;
    if !pf.converged {
        if mode == HomotopyMode::Off {
            return Err(Error::MaxIterations {
                iterations: pf.iterations,
                residual: pf.residual_norm,
            });
        }
        return continuation_redispatch(p, power_flow);
    }
    let start = warm_start(p, &pf)?;
    let direct = kkt_iterate(p, start, 1.0, 0.0);
    match direct {
        Ok(out) if out.converged || mode == HomotopyMode::Off => Ok(finish(p, out, false)),
        Err(e) if mode == HomotopyMode::Off => Err(e),
        Ok(out) => {
            log::info!(
                "direct KKT solve stopped at residual {:.3e}, engaging continuation",
                out.residual
            );
            continuation_redispatch(p, power_flow).or_else(|e| {
                log::warn!("continuation failed: {e}");
                Ok(finish(p, out, false))
            })
        }
        Err(e) => {
            log::info!("direct KKT solve failed ({e}), engaging continuation");
            continuation_redispatch(p, power_flow)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BandViolation {
    pub bus: u32,
    pub target: LimitTarget,
    pub value: f64,
    pub lo: f64,
    pub hi: f64,
    pub hard: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Certification {
    pub passed: bool,
    pub converged: bool,
    pub solution: Option<PowerFlowSolution>,
    pub violations: Vec<BandViolation>,
}

/// Re-solves plain power flow at `v_set` and checks every limiter band.
/// Soft bands are widened by `band_tol`; hard bands must hold strictly.
pub fn verify_redispatch(
    case: &GridCase,
    v_set: &[(u32, f64)],
    limiters: &[LimiterState],
    power_flow: &SolverOptions,
    homotopy: &HomotopySettings,
    band_tol: f64,
) -> Result<Certification> {
    let updated = case.with_setpoints(v_set)?;
    let sol = match homotopy::solve_power_flow(&updated, power_flow, homotopy) {
        Ok(s) => s,
        Err(e @ (Error::Singular { .. } | Error::ContinuationStall { .. })) => {
            log::warn!("certification power flow failed: {e}");
            return Ok(Certification {
                passed: false,
                converged: false,
                solution: None,
                violations: Vec::new(),
            });
        }
        Err(e) => return Err(e),
    };
    let mut violations = Vec::new();
    for lim in limiters {
        let (bus, value) = match lim.target {
            LimitTarget::Voltage { bus } => (bus, sol.v[bus].norm()),
            LimitTarget::Reactive { group } => {
                let g = updated
                    .generator_groups()
                    .get(group)
                    .ok_or_else(|| Error::InvalidArgument(format!("no generator group {group}")))?;
                (g.bus, sol.group_q[group])
            }
        };
        let hard = lim.hardness == Hardness::Hard;
        let inside = if hard {
            value > lim.lo && value < lim.hi
        } else {
            value >= lim.lo - band_tol && value <= lim.hi + band_tol
        };
        if !inside {
            violations.push(BandViolation {
                bus: updated.buses()[bus].id,
                target: lim.target,
                value,
                lo: lim.lo,
                hi: lim.hi,
                hard,
            });
        }
    }
    Ok(Certification {
        passed: sol.converged && violations.is_empty(),
        converged: sol.converged,
        solution: Some(sol),
        violations,
    })
}
