//! Setpoint re-dispatch as an equality-constrained problem solved on its
//! KKT conditions.
//!
//! Primal variables are the voltages of every energized bus (the slack
//! included), the slack injection `(P_s, Q_s)`, the reactive output of each
//! regulated group, one `V_SET` per soft-limited bus and one diode current
//! `s` per limiter. Constraints are the KCL rows, the slack angle
//! reference, one magnitude row per regulated or limited bus, and one
//! defining equation `s - diode(target)` per limiter. The objective is the
//! weighted sum of squared diode currents.

mod kkt;
mod redispatch;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::homotopy::HomotopySettings;
use crate::limiter::{Hardness, LimitTarget, LimiterState};
use crate::model::GridCase;
use crate::pf::{build_system, SolverOptions, SplitCircuitSystem};

pub use kkt::{
    hard_limit_breaches, kkt_newton_solve, lagrangian_residual, lagrangian_value, limit_kkt_step, KktMatrix,
};
pub use redispatch::{
    redispatch, solve_problem, verify_redispatch, warm_start, BandViolation, Certification, RedispatchConfig,
};

#[derive(Debug, Clone, PartialEq)]
pub struct RedispatchOptions {
    /// `tol`, `max_iter` and `delta_v_max` apply to the KKT iteration;
    /// `init` is ignored.
    pub solver: SolverOptions,
    /// Cap on the ∞-norm of the dual part of each Newton step.
    pub dual_step_cap: f64,
    /// A warm-start `Q` outside its hard band is moved this fraction of the
    /// band width inside it.
    pub q_projection_margin: f64,
    pub homotopy: HomotopySettings,
}

impl Default for RedispatchOptions {
    fn default() -> Self {
        RedispatchOptions {
            solver: SolverOptions::default(),
            dual_step_cap: 1e3,
            q_projection_margin: 0.05,
            homotopy: HomotopySettings::default(),
        }
    }
}

/// Where a bus setpoint lives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum SetpointRef {
    Var(usize),
    Param(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct MagnitudeRow {
    pub bus: usize,
    pub row: usize,
    pub v_set: SetpointRef,
    /// Row introduced only to tie an auxiliary `V_SET` to the bus voltage.
    pub auxiliary: bool,
}

/// Index maps of the KKT system.
#[derive(Debug, Clone, PartialEq)]
pub struct KktLayout {
    pub(crate) n_primal: usize,
    pub(crate) n_dual: usize,
    pub(crate) v_slot: Vec<Option<usize>>,
    pub(crate) p_slack: usize,
    pub(crate) q_slack: usize,
    /// Per generator group; the slack group maps to `q_slack`.
    pub(crate) q_slot: Vec<Option<usize>>,
    pub(crate) vset_slot: Vec<Option<usize>>,
    pub(crate) s_slot: Vec<usize>,
    pub(crate) target_slot: Vec<usize>,
    pub(crate) kcl_row: Vec<Option<usize>>,
    pub(crate) angle_row: usize,
    pub(crate) magnitude_rows: Vec<MagnitudeRow>,
    pub(crate) limiter_row: Vec<usize>,
}

impl KktLayout {
    pub fn n_primal(&self) -> usize {
        self.n_primal
    }
    pub fn n_dual(&self) -> usize {
        self.n_dual
    }
    pub fn voltage_slots(&self, bus: usize) -> Option<(usize, usize)> {
        self.v_slot[bus].map(|k| (k, k + 1))
    }
    pub fn vset_slot(&self, bus: usize) -> Option<usize> {
        self.vset_slot[bus]
    }
    pub fn q_slot(&self, group: usize) -> Option<usize> {
        self.q_slot[group]
    }
    pub fn s_slot(&self, limiter: usize) -> usize {
        self.s_slot[limiter]
    }
    /// Primal slot of the quantity a limiter acts on.
    pub fn target_slot(&self, limiter: usize) -> usize {
        self.target_slot[limiter]
    }
    pub fn limiter_row(&self, limiter: usize) -> usize {
        self.limiter_row[limiter]
    }
}

/// Constraint counts by family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ConstraintCounts {
    /// Scalar KCL rows (two per energized bus).
    pub kcl: usize,
    pub angle: usize,
    /// Magnitude rows at regulated generator buses whose setpoint is fixed.
    pub regulation: usize,
    pub soft_limit: usize,
    pub hard_limit: usize,
    /// Magnitude rows tying a variable `V_SET` to its bus voltage.
    pub v_eq: usize,
}

#[derive(Debug, Clone)]
pub struct OptimizationProblem {
    pub(crate) case: GridCase,
    pub(crate) sys: SplitCircuitSystem,
    pub(crate) limiters: Vec<LimiterState>,
    pub(crate) weights: Vec<f64>,
    pub(crate) options: RedispatchOptions,
    pub(crate) layout: KktLayout,
}

/// Primal and dual vectors in the order of [`KktLayout`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KKTIterate {
    pub primal: Vec<f64>,
    pub dual: Vec<f64>,
}

impl KKTIterate {
    pub fn to_vec(&self) -> Vec<f64> {
        let mut z = self.primal.clone();
        z.extend_from_slice(&self.dual);
        z
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IterateRecord {
    pub iteration: usize,
    pub gamma: f64,
    pub residual: f64,
    pub objective: f64,
    /// Smallest distance of a hard-limited value to its nearest bound,
    /// relative to the band width; infinite without hard limiters.
    pub hard_margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RedispatchResult {
    pub converged: bool,
    /// `(bus id, setpoint)` per generator group.
    pub v_set: Vec<(u32, f64)>,
    pub solution: crate::pf::PowerFlowSolution,
    pub kkt_residual: f64,
    pub objective_value: f64,
    pub iterations: usize,
    pub used_homotopy: bool,
    pub trace: Vec<IterateRecord>,
    pub iterate: KKTIterate,
}

impl OptimizationProblem {
    pub fn case(&self) -> &GridCase {
        &self.case
    }
    pub fn limiters(&self) -> &[LimiterState] {
        &self.limiters
    }
    pub fn layout(&self) -> &KktLayout {
        &self.layout
    }
    pub fn system(&self) -> &SplitCircuitSystem {
        &self.sys
    }
    pub fn options(&self) -> &RedispatchOptions {
        &self.options
    }
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn set_weights(&mut self, weights: Vec<f64>) -> Result<()> {
        if weights.len() != self.limiters.len() || weights.iter().any(|w| !(*w > 0.0)) {
            return Err(Error::InvalidArgument(
                "one positive weight per limiter required".into(),
            ));
        }
        self.weights = weights;
        Ok(())
    }

    pub fn constraint_counts(&self) -> ConstraintCounts {
        let l = &self.layout;
        let soft = self.limiters.iter().filter(|s| s.hardness == Hardness::Soft).count();
        let v_eq = l
            .magnitude_rows
            .iter()
            .filter(|m| matches!(m.v_set, SetpointRef::Var(_)))
            .count();
        ConstraintCounts {
            kcl: l.kcl_row.iter().flatten().count() * 2,
            angle: 1,
            regulation: l.magnitude_rows.len() - v_eq,
            soft_limit: soft,
            hard_limit: self.limiters.len() - soft,
            v_eq,
        }
    }
}

/// Lays out the KKT system of `case` with the given limiters.
pub fn formulate(
    case: &GridCase,
    limiters: Vec<LimiterState>,
    options: RedispatchOptions,
) -> Result<OptimizationProblem> {
    options.solver.validate()?;
    if !(options.dual_step_cap > 0.0) {
        return Err(Error::InvalidArgument("dual_step_cap must be positive".into()));
    }
    let sys = build_system(case)?;
    let n = sys.n_buses();
    let slack = sys.slack();

    let mut soft_bus = vec![false; n];
    for (k, lim) in limiters.iter().enumerate() {
        lim.params.validate()?;
        if !(lim.lo < lim.hi) {
            return Err(Error::InvalidArgument(format!("limiter {k} has an empty band")));
        }
        match (lim.target, lim.hardness) {
            (LimitTarget::Voltage { bus }, Hardness::Soft) => {
                if bus >= n || !sys.energized()[bus] {
                    return Err(Error::InvalidArgument(format!(
                        "limiter {k} references missing voltage variable at bus index {bus}"
                    )));
                }
                if soft_bus[bus] {
                    return Err(Error::InvalidArgument(format!("bus index {bus} limited twice")));
                }
                soft_bus[bus] = true;
            }
            (LimitTarget::Reactive { group }, Hardness::Hard) => {
                let ok =
                    group < sys.groups().len() && (sys.q_slot(group).is_some() || sys.groups()[group].bus == slack);
                if !ok {
                    return Err(Error::InvalidArgument(format!(
                        "limiter {k} references missing reactive variable of group {group}"
                    )));
                }
                if lim.params.model != crate::limiter::DiodeModel::Hyperbolic {
                    return Err(Error::InvalidArgument(format!(
                        "limiter {k}: hard limits are hyperbolic"
                    )));
                }
            }
            _ => {
                return Err(Error::InvalidArgument(format!(
                    "limiter {k}: voltage limits are soft and reactive limits hard"
                )))
            }
        }
    }

    let mut next = 0;
    let mut take = |k: usize| {
        let s = next;
        next += k;
        s
    };
    let mut v_slot = vec![None; n];
    for b in 0..n {
        if sys.energized()[b] {
            v_slot[b] = Some(take(2));
        }
    }
    let p_slack = take(1);
    let q_slack = take(1);
    let mut q_slot = vec![None; sys.groups().len()];
    for (g, grp) in sys.groups().iter().enumerate() {
        q_slot[g] = if grp.bus == slack {
            Some(q_slack)
        } else if sys.q_slot(g).is_some() {
            Some(take(1))
        } else {
            None
        };
    }
    let mut vset_slot = vec![None; n];
    for b in 0..n {
        if soft_bus[b] {
            vset_slot[b] = Some(take(1));
        }
    }
    let s_slot: Vec<usize> = limiters.iter().map(|_| take(1)).collect();
    let target_slot: Vec<usize> = limiters
        .iter()
        .map(|l| match l.target {
            LimitTarget::Voltage { bus } => vset_slot[bus].unwrap(),
            LimitTarget::Reactive { group } => q_slot[group].unwrap(),
        })
        .collect();
    let n_primal = next;

    let mut row = 0;
    let mut kcl_row = vec![None; n];
    for b in 0..n {
        if sys.energized()[b] {
            kcl_row[b] = Some(row);
            row += 2;
        }
    }
    let angle_row = row;
    row += 1;
    let regulated = |b: usize| {
        b == slack
            || sys
                .groups()
                .iter()
                .enumerate()
                .any(|(g, grp)| grp.bus == b && sys.q_slot(g).is_some())
    };
    let mut magnitude_rows = Vec::new();
    for b in 0..n {
        if !sys.energized()[b] {
            continue;
        }
        let reg = regulated(b);
        if !reg && !soft_bus[b] {
            continue;
        }
        let v_set = match vset_slot[b] {
            Some(s) => SetpointRef::Var(s),
            None => SetpointRef::Param(regulated_setpoint(&sys, b)),
        };
        magnitude_rows.push(MagnitudeRow {
            bus: b,
            row,
            v_set,
            auxiliary: !reg,
        });
        row += 1;
    }
    let limiter_row: Vec<usize> = limiters
        .iter()
        .map(|_| {
            row += 1;
            row - 1
        })
        .collect();

    let weights = vec![1.0; limiters.len()];
    let layout = KktLayout {
        n_primal,
        n_dual: row,
        v_slot,
        p_slack,
        q_slack,
        q_slot,
        vset_slot,
        s_slot,
        target_slot,
        kcl_row,
        angle_row,
        magnitude_rows,
        limiter_row,
    };
    Ok(OptimizationProblem {
        case: case.clone(),
        sys,
        limiters,
        weights,
        options,
        layout,
    })
}

/// Setpoint of a regulated bus in the case (the slack magnitude for the
/// slack bus).
pub(crate) fn regulated_setpoint(sys: &SplitCircuitSystem, bus: usize) -> f64 {
    if bus == sys.slack() {
        sys.slack_voltage().norm()
    } else {
        sys.groups().iter().find(|g| g.bus == bus).map_or(1.0, |g| g.v_set)
    }
}
