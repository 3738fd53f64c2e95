//! N-1 outage enumeration and sweeps.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::homotopy::{solve_power_flow, HomotopySettings};
use crate::model::{apply_outage, GridCase};
use crate::pf::SolverOptions;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ContingencyKind {
    BranchOutage,
    GeneratorOutage,
}

/// One outage. `element` is the branch position for branch outages and the
/// bus id for generator outages.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ContingencySpec {
    pub kind: ContingencyKind,
    pub element: usize,
    pub label: String,
}

impl ContingencySpec {
    pub fn branch(case: &GridCase, index: usize) -> Self {
        let label = match case.branches().get(index) {
            Some(b) => format!("branch {}-{} #{index}", b.from, b.to),
            None => format!("branch #{index}"),
        };
        ContingencySpec {
            kind: ContingencyKind::BranchOutage,
            element: index,
            label,
        }
    }

    pub fn generator(bus_id: u32) -> Self {
        ContingencySpec {
            kind: ContingencyKind::GeneratorOutage,
            element: bus_id as usize,
            label: format!("gen @{bus_id}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum ContingencyFilter {
    Branches,
    Generators,
    #[default]
    All,
}

/// Every in-service branch, then every generator group off the slack bus.
pub fn enumerate_n1(case: &GridCase, filter: ContingencyFilter) -> Vec<ContingencySpec> {
    let mut out = Vec::new();
    if filter != ContingencyFilter::Generators {
        for (i, br) in case.branches().iter().enumerate() {
            if br.status.is_in() {
                out.push(ContingencySpec::branch(case, i));
            }
        }
    }
    if filter != ContingencyFilter::Branches {
        let slack = case.slack_index();
        for g in case.generator_groups().iter().filter(|g| g.bus != slack) {
            out.push(ContingencySpec::generator(case.buses()[g.bus].id));
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ContingencyConfig {
    pub solver: SolverOptions,
    pub homotopy: HomotopySettings,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ContingencyResult {
    pub spec: ContingencySpec,
    pub converged: bool,
    pub islanded: bool,
    /// Over energized buses; NaN unless converged.
    pub v_min: f64,
    pub v_max: f64,
    pub iterations: usize,
    /// Magnitude per energized bus of the post-outage solution.
    pub v_mag: Vec<f64>,
}

impl ContingencyResult {
    fn failed(spec: ContingencySpec, islanded: bool, iterations: usize) -> Self {
        ContingencyResult {
            spec,
            converged: false,
            islanded,
            v_min: f64::NAN,
            v_max: f64::NAN,
            iterations,
            v_mag: Vec::new(),
        }
    }
}

/// Applies one outage and solves plain power flow at `setpoints`. Every
/// failure mode is recorded in the result.
pub fn run_contingency(
    base: &GridCase,
    spec: &ContingencySpec,
    setpoints: &[(u32, f64)],
    config: &ContingencyConfig,
) -> ContingencyResult {
    let case = match base.with_setpoints(setpoints).and_then(|c| apply_outage(&c, spec)) {
        Ok(c) => c,
        Err(e) => {
            log::warn!("{}: {e}", spec.label);
            return ContingencyResult::failed(spec.clone(), false, 0);
        }
    };
    if let Err(Error::Island { bus }) = case.topology() {
        log::debug!("{}: bus {bus} islanded", spec.label);
        return ContingencyResult::failed(spec.clone(), true, 0);
    }
    match solve_power_flow(&case, &config.solver, &config.homotopy) {
        Ok(sol) if sol.converged => {
            let v_mag: Vec<f64> = sol
                .v
                .iter()
                .zip(&sol.energized)
                .filter(|(_, &e)| e)
                .map(|(v, _)| v.norm())
                .collect();
            let (v_min, v_max) = extremes(&v_mag);
            ContingencyResult {
                spec: spec.clone(),
                converged: true,
                islanded: false,
                v_min,
                v_max,
                iterations: sol.iterations,
                v_mag,
            }
        }
        Ok(sol) => ContingencyResult::failed(spec.clone(), false, sol.iterations),
        Err(e) => {
            log::warn!("{}: {e}", spec.label);
            ContingencyResult::failed(spec.clone(), false, 0)
        }
    }
}

pub fn extremes(v: &[f64]) -> (f64, f64) {
    v.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &m| {
        (lo.min(m), hi.max(m))
    })
}

/// Runs every spec in parallel; results keep the order of `specs`.
pub fn sweep(
    base: &GridCase,
    specs: &[ContingencySpec],
    setpoints: &[(u32, f64)],
    config: &ContingencyConfig,
) -> Vec<ContingencyResult> {
    specs
        .par_iter()
        .map(|s| run_contingency(base, s, setpoints, config))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Bin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Histogram {
    pub bin_width: f64,
    /// Contiguous bins from the lowest to the highest occupied one.
    pub bins: Vec<Bin>,
}

impl Histogram {
    pub fn build(values: &[f64], bin_width: f64) -> Self {
        let index = |v: f64| (v / bin_width + 1e-9).floor() as i64;
        let Some(lo) = values.iter().map(|&v| index(v)).min() else {
            return Histogram {
                bin_width,
                bins: Vec::new(),
            };
        };
        let hi = values.iter().map(|&v| index(v)).max().unwrap();
        let mut bins: Vec<Bin> = (lo..=hi)
            .map(|k| Bin {
                lo: k as f64 * bin_width,
                hi: (k + 1) as f64 * bin_width,
                count: 0,
            })
            .collect();
        for &v in values {
            bins[(index(v) - lo) as usize].count += 1;
        }
        Histogram { bin_width, bins }
    }

    pub fn total(&self) -> usize {
        self.bins.iter().map(|b| b.count).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DistributionReport {
    pub total: usize,
    pub converged: usize,
    /// Records with `converged = false`, islanded ones included.
    pub failed: usize,
    pub islanded: usize,
    pub v_min: Histogram,
    pub v_max: Histogram,
    /// Largest `v_max` over converged records.
    pub worst_v_max: Option<f64>,
    /// Smallest `v_min` over converged records.
    pub worst_v_min: Option<f64>,
}

pub fn summarize(results: &[ContingencyResult], bin_width: f64) -> Result<DistributionReport> {
    if !(bin_width > 0.0 && bin_width.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "bin width must be positive, got {bin_width}"
        )));
    }
    let ok: Vec<&ContingencyResult> = results.iter().filter(|r| r.converged).collect();
    let mins: Vec<f64> = ok.iter().map(|r| r.v_min).collect();
    let maxs: Vec<f64> = ok.iter().map(|r| r.v_max).collect();
    Ok(DistributionReport {
        total: results.len(),
        converged: ok.len(),
        failed: results.len() - ok.len(),
        islanded: results.iter().filter(|r| r.islanded).count(),
        v_min: Histogram::build(&mins, bin_width),
        v_max: Histogram::build(&maxs, bin_width),
        worst_v_max: maxs.iter().copied().reduce(f64::max),
        worst_v_min: mins.iter().copied().reduce(f64::min),
    })
}
