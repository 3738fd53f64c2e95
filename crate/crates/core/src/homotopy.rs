//! Admittance-stepping continuation.
//!
//! Level `gamma` solves the network with every series branch admittance
//! multiplied by `1 + gamma * beta`. At `gamma = 1` the network is stiff and
//! all buses sit near the slack voltage; the schedule then walks `gamma`
//! down geometrically and finishes at exactly zero.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::GridCase;
use crate::pf::{build_system, solve_system, Init, PowerFlowSolution, SolverOptions, SplitCircuitSystem};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HomotopySchedule {
    pub beta: f64,
    pub shrink: f64,
    pub min_gamma: f64,
    pub max_retries: usize,
}

impl Default for HomotopySchedule {
    fn default() -> Self {
        HomotopySchedule {
            beta: 100.0,
            shrink: 0.5,
            min_gamma: 1e-6,
            max_retries: 3,
        }
    }
}

impl HomotopySchedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "beta must be positive, got {}",
                self.beta
            )));
        }
        if !(self.shrink > 0.0 && self.shrink < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "gamma shrink must lie in (0, 1), got {}",
                self.shrink
            )));
        }
        if !(self.min_gamma > 0.0 && self.min_gamma < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "min_gamma must lie in (0, 1), got {}",
                self.min_gamma
            )));
        }
        Ok(())
    }

    /// Branch admittance multiplier at `gamma`.
    pub fn scale(&self, gamma: f64) -> f64 {
        1.0 + gamma * self.beta
    }

    /// Nominal next level: geometric, snapped to 0 below `min_gamma`.
    pub fn next(&self, gamma: f64) -> f64 {
        let g = gamma * self.shrink;
        if g < self.min_gamma {
            0.0
        } else {
            g
        }
    }

    /// Nominal levels without any bisection, from 1 down to 0.
    pub fn levels(&self) -> Vec<f64> {
        let mut out = vec![1.0];
        let mut g = 1.0;
        while g > 0.0 {
            g = self.next(g);
            out.push(g);
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum HomotopyMode {
    On,
    Off,
    /// Direct solve first; continuation only if it fails.
    #[default]
    Auto,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct HomotopySettings {
    pub mode: HomotopyMode,
    pub schedule: HomotopySchedule,
}

/// A problem family parameterized by `gamma`.
pub trait ContinuationProblem {
    type State;

    /// Solves one level. `Ok(None)` means the inner solver did not converge.
    fn solve_level(&mut self, gamma: f64, warm: Option<&Self::State>) -> Result<Option<Self::State>>;

    /// Largest per-bus voltage change between two states.
    fn voltage_change(&self, from: &Self::State, to: &Self::State) -> f64;
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ContinuationTrace {
    /// Accepted levels in order; last entry is 0.
    pub accepted: Vec<f64>,
    /// Levels that failed or jumped too far and were bisected.
    pub rejected: Vec<f64>,
    /// Per accepted level after the first, the voltage change from the
    /// previous level.
    pub voltage_steps: Vec<f64>,
}

/// Traces the solution from `gamma = 1` to `gamma = 0`.
///
/// A level whose inner solve fails, or whose voltages move more than
/// `delta_v_max` at some bus, is retried halfway between the last accepted
/// level and the attempted one, up to `max_retries` times.
pub fn continuation_solve<P: ContinuationProblem>(
    problem: &mut P,
    schedule: &HomotopySchedule,
    delta_v_max: f64,
) -> Result<(P::State, ContinuationTrace)> {
    schedule.validate()?;
    let mut trace = ContinuationTrace::default();
    let Some(mut state) = solve_or_fail(problem, 1.0, None)? else {
        return Err(Error::ContinuationStall { gamma: 1.0 });
    };
    trace.accepted.push(1.0);
    let mut gamma = 1.0;
    while gamma > 0.0 {
        let mut target = schedule.next(gamma);
        let mut tries = 0;
        loop {
            if let Some(next) = solve_or_fail(problem, target, Some(&state))? {
                let dv = problem.voltage_change(&state, &next);
                if dv <= delta_v_max {
                    state = next;
                    trace.voltage_steps.push(dv);
                    break;
                }
                log::debug!("continuation: gamma={target} moved voltages by {dv:.3}");
            }
            trace.rejected.push(target);
            if tries == schedule.max_retries {
                return Err(Error::ContinuationStall { gamma });
            }
            tries += 1;
            target = 0.5 * (gamma + target);
        }
        gamma = target;
        trace.accepted.push(gamma);
    }
    Ok((state, trace))
}

/// Inner non-convergence and limiter faults are level failures; anything
/// else (notably a singular matrix) propagates.
fn solve_or_fail<P: ContinuationProblem>(
    problem: &mut P,
    gamma: f64,
    warm: Option<&P::State>,
) -> Result<Option<P::State>> {
    match problem.solve_level(gamma, warm) {
        Ok(s) => Ok(s),
        Err(Error::LimiterFault { .. }) | Err(Error::MaxIterations { .. }) => Ok(None),
        Err(e) => Err(e),
    }
}

pub(crate) fn max_voltage_change(a: &[Complex64], b: &[Complex64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}

/// Plain power flow traced along the admittance homotopy.
pub struct PowerFlowContinuation<'a> {
    pub sys: &'a SplitCircuitSystem,
    pub options: SolverOptions,
    pub beta: f64,
}

impl ContinuationProblem for PowerFlowContinuation<'_> {
    type State = PowerFlowSolution;

    fn solve_level(&mut self, gamma: f64, warm: Option<&PowerFlowSolution>) -> Result<Option<PowerFlowSolution>> {
        let mut opts = self.options.clone();
        if let Some(w) = warm {
            opts.init = Init::Warm(w.x.clone());
        }
        let sol = solve_system(self.sys, 1.0 + gamma * self.beta, &opts)?;
        Ok(sol.converged.then_some(sol))
    }

    fn voltage_change(&self, from: &PowerFlowSolution, to: &PowerFlowSolution) -> f64 {
        max_voltage_change(&from.v, &to.v)
    }
}

/// Power flow with the configured continuation policy.
pub fn solve_power_flow(
    case: &GridCase,
    opts: &SolverOptions,
    settings: &HomotopySettings,
) -> Result<PowerFlowSolution> {
    let sys = build_system(case)?;
    solve_power_flow_system(&sys, opts, settings)
}

pub(crate) fn solve_power_flow_system(
    sys: &SplitCircuitSystem,
    opts: &SolverOptions,
    settings: &HomotopySettings,
) -> Result<PowerFlowSolution> {
    let traced = |sys: &SplitCircuitSystem| {
        let mut cont = PowerFlowContinuation {
            sys,
            options: SolverOptions {
                init: Init::Flat,
                ..opts.clone()
            },
            beta: settings.schedule.beta,
        };
        continuation_solve(&mut cont, &settings.schedule, opts.delta_v_max).map(|(s, t)| {
            log::info!("continuation reached gamma=0 after {} levels", t.accepted.len());
            s
        })
    };
    match settings.mode {
        HomotopyMode::Off => solve_system(sys, 1.0, opts),
        HomotopyMode::On => traced(sys),
        HomotopyMode::Auto => {
            let direct = solve_system(sys, 1.0, opts);
            match direct {
                Ok(ref s) if s.converged => direct,
                Ok(_) | Err(Error::Singular { .. }) => {
                    log::info!("direct power flow failed, engaging continuation");
                    match traced(sys) {
                        Ok(s) => Ok(s),
                        Err(e) => {
                            log::warn!("continuation failed: {e}");
                            direct
                        }
                    }
                }
                Err(e) => Err(e),
            }
        }
    }
}
