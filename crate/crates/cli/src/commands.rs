use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use gridvolt::contingency::{enumerate_n1, summarize, sweep, ContingencyConfig, ContingencyFilter};
use gridvolt::homotopy::solve_power_flow;
use gridvolt::limiter::{attach_limiters, LimiterConfig};
use gridvolt::model::{parse_case_with, write_native_json};
use gridvolt::opt::{redispatch, verify_redispatch, RedispatchConfig, RedispatchOptions};
use gridvolt::report::{contingency_csv, emit_voltage_profile, histogram_csv, sibling, to_json};
use gridvolt::{scale_load, GridCase, PowerFlowSolution, SolverOptions};
use serde::{Deserialize, Serialize};

use crate::manifest::Manifest;
use crate::{Command, CommonArgs, ContingencyArgs, FilterArg, NotConverged, RedispatchArgs};

/// One generator-bus setpoint in the setpoints JSON file.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SetpointRecord {
    pub bus: u32,
    pub v_set: f64,
}

#[derive(Serialize)]
struct SolverEcho {
    tol: f64,
    max_iter: usize,
    delta_v_max: f64,
}

impl From<&SolverOptions> for SolverEcho {
    fn from(o: &SolverOptions) -> Self {
        SolverEcho {
            tol: o.tol,
            max_iter: o.max_iter,
            delta_v_max: o.delta_v_max,
        }
    }
}

#[derive(Serialize)]
struct LimiterEcho<'a> {
    soft: &'a gridvolt::limiter::DiodeParams,
    hard: &'a gridvolt::limiter::DiodeParams,
    kv_filter: &'a Option<Vec<f64>>,
    band: Option<(f64, f64)>,
    limit_slack_q: bool,
}

impl<'a> From<&'a LimiterConfig> for LimiterEcho<'a> {
    fn from(c: &'a LimiterConfig) -> Self {
        LimiterEcho {
            soft: &c.soft,
            hard: &c.hard,
            kv_filter: &c.kv_filter,
            band: c.band,
            limit_slack_q: c.limit_slack_q,
        }
    }
}

pub fn execute(cmd: &Command, m: &mut Manifest) -> Result<()> {
    match cmd {
        Command::Pf(a) => pf(&a.common, m),
        Command::Redispatch(a) => run_redispatch(a, m),
        Command::Contingency(a) => contingency(a, m),
        Command::Scale(a) => scale(&a.common, m),
    }
}

/// Refuses to write over the input case.
pub fn guard_output(case: &Path, out: &Path) -> Result<()> {
    if let (Ok(a), Ok(b)) = (case.canonicalize(), out.canonicalize()) {
        if a == b {
            bail!("refusing to overwrite the input case {}", case.display());
        }
    }
    Ok(())
}

fn write_file(common: &CommonArgs, m: &mut Manifest, path: &Path, body: &str) -> Result<()> {
    guard_output(&common.case, path)?;
    m.time("write", || std::fs::write(path, body))
        .with_context(|| format!("writing {}", path.display()))?;
    m.output(path);
    Ok(())
}

fn print_stdout(body: &str) -> Result<()> {
    let mut out = std::io::stdout().lock();
    match out.write_all(body.as_bytes()).and_then(|_| out.write_all(b"\n")) {
        // A closed reader (`| head`) is not a failure of the run.
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
        r => Ok(r?),
    }
}

fn load_unscaled(common: &CommonArgs, m: &mut Manifest) -> Result<GridCase> {
    let opts = common.parse_options()?;
    let case = m
        .time("load", || parse_case_with(&common.case, common.case_format(), &opts))
        .with_context(|| format!("loading {}", common.case.display()))?;
    log::info!(
        "{}: {} buses, {} branches, {:.1} MW load",
        common.case.display(),
        case.buses().len(),
        case.branches().len(),
        case.total_load_mw()
    );
    Ok(case)
}

fn load_case(common: &CommonArgs, m: &mut Manifest) -> Result<GridCase> {
    let case = load_unscaled(common, m)?;
    match common.scale_load {
        Some(f) => Ok(scale_load(&case, f)?),
        None => Ok(case),
    }
}

fn solve(common: &CommonArgs, m: &mut Manifest, case: &GridCase, phase: &str) -> Result<PowerFlowSolution> {
    let opts = common.solver()?;
    let settings = common.homotopy()?;
    m.resolve("solver", SolverEcho::from(&opts));
    m.resolve("homotopy", settings);
    Ok(m.time(phase, || solve_power_flow(case, &opts, &settings))?)
}

#[derive(Serialize)]
struct BusRow {
    id: u32,
    base_kv: f64,
    energized: bool,
    vm: f64,
    va_deg: f64,
    v_re: f64,
    v_im: f64,
}

#[derive(Serialize)]
struct GroupRow {
    bus: u32,
    v_set: f64,
    q: f64,
    q_min: f64,
    q_max: f64,
}

/// Power-flow solution as printed by `pf`. Quantities in pu on `base_mva`.
#[derive(Serialize)]
struct PfReport {
    converged: bool,
    iterations: usize,
    residual_norm: f64,
    base_mva: f64,
    total_load_mw: f64,
    v_min: f64,
    v_max: f64,
    slack_p: f64,
    slack_q: f64,
    buses: Vec<BusRow>,
    generators: Vec<GroupRow>,
}

impl PfReport {
    fn new(case: &GridCase, sol: &PowerFlowSolution) -> Self {
        let (v_min, v_max) = sol.v_range();
        let buses = case
            .buses()
            .iter()
            .enumerate()
            .map(|(i, b)| BusRow {
                id: b.id,
                base_kv: b.base_kv,
                energized: sol.energized[i],
                vm: sol.v[i].norm(),
                va_deg: sol.v[i].arg().to_degrees(),
                v_re: sol.v[i].re,
                v_im: sol.v[i].im,
            })
            .collect();
        let generators = case
            .generator_groups()
            .iter()
            .zip(&sol.group_q)
            .map(|(g, &q)| GroupRow {
                bus: case.buses()[g.bus].id,
                v_set: g.v_set,
                q,
                q_min: g.q_min,
                q_max: g.q_max,
            })
            .collect();
        PfReport {
            converged: sol.converged,
            iterations: sol.iterations,
            residual_norm: sol.residual_norm,
            base_mva: case.base_mva(),
            total_load_mw: case.total_load_mw(),
            v_min,
            v_max,
            slack_p: sol.slack_power.re,
            slack_q: sol.slack_power.im,
            buses,
            generators,
        }
    }
}

fn pf(common: &CommonArgs, m: &mut Manifest) -> Result<()> {
    let case = load_case(common, m)?;
    let sol = solve(common, m, &case, "solve")?;
    let body = to_json(&PfReport::new(&case, &sol));
    match &common.out {
        Some(path) => write_file(common, m, path, &(body + "\n"))?,
        None => print_stdout(&body)?,
    }
    if !sol.converged {
        return Err(NotConverged(format!(
            "power flow stopped after {} iterations at residual {:.3e}",
            sol.iterations, sol.residual_norm
        ))
        .into());
    }
    Ok(())
}

fn json_path(path: &Path, tag: &str) -> PathBuf {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("out");
    path.with_file_name(format!("{stem}_{tag}.json"))
}

#[derive(Serialize)]
struct RedispatchSummary<'a> {
    converged: bool,
    iterations: usize,
    objective: f64,
    kkt_residual: f64,
    used_homotopy: bool,
    certified: bool,
    violations: &'a [gridvolt::opt::BandViolation],
    v_range_base: (f64, f64),
    v_range_redispatch: (f64, f64),
    setpoints: Vec<SetpointRecord>,
}

fn records(sp: &[(u32, f64)]) -> Vec<SetpointRecord> {
    sp.iter().map(|&(bus, v_set)| SetpointRecord { bus, v_set }).collect()
}

fn run_redispatch(args: &RedispatchArgs, m: &mut Manifest) -> Result<()> {
    let common = &args.common;
    let limiters = args.limiters.config(common.band()?)?;
    if !(args.band_tol >= 0.0) {
        bail!("--band-tol must be non-negative, got {}", args.band_tol);
    }
    let solver = common.solver()?;
    let homotopy = common.homotopy()?;
    m.resolve("limiters", LimiterEcho::from(&limiters));
    let case = load_case(common, m)?;

    let before = solve(common, m, &case, "base_power_flow")?;
    if !before.converged {
        return Err(NotConverged("base-case power flow".into()).into());
    }
    let config = RedispatchConfig {
        limiters: limiters.clone(),
        options: RedispatchOptions {
            solver: solver.clone(),
            homotopy,
            ..RedispatchOptions::default()
        },
        power_flow: solver.clone(),
    };
    let r = m.time("redispatch", || redispatch(&case, &config))?;
    if !r.converged {
        return Err(NotConverged(format!(
            "re-dispatch stopped after {} iterations at KKT residual {:.3e}",
            r.iterations, r.kkt_residual
        ))
        .into());
    }
    let states = attach_limiters(&case, &limiters);
    let cert = m.time("certify", || {
        verify_redispatch(&case, &r.v_set, &states, &solver, &homotopy, args.band_tol)
    })?;
    let Some(after) = cert.solution.as_ref().filter(|s| s.converged) else {
        return Err(NotConverged("power flow at the re-dispatched setpoints".into()).into());
    };
    for v in &cert.violations {
        log::warn!(
            "bus {} outside [{}, {}] after re-dispatch: {}",
            v.bus,
            v.lo,
            v.hi,
            v.value
        );
    }
    if !cert.passed {
        eprintln!(
            "warning: re-dispatched setpoints violate {} limiter band(s)",
            cert.violations.len()
        );
    }

    let out = common
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from("voltage_profile.csv"));
    let sp_json = args
        .setpoints_out
        .clone()
        .unwrap_or_else(|| json_path(&out, "setpoints"));
    let base_sp = case.setpoints();
    for p in [&out, &sibling(&out, "setpoints"), &sp_json] {
        guard_output(&common.case, p)?;
    }
    m.time("write", || {
        emit_voltage_profile(
            &case,
            &before,
            after,
            (&base_sp, &r.v_set),
            limiters.kv_filter.as_deref(),
            &out,
        )
    })?;
    m.output(&out);
    m.output(&sibling(&out, "setpoints"));
    write_file(common, m, &sp_json, &(to_json(&records(&r.v_set)) + "\n"))?;

    let summary = RedispatchSummary {
        converged: r.converged,
        iterations: r.iterations,
        objective: r.objective_value,
        kkt_residual: r.kkt_residual,
        used_homotopy: r.used_homotopy,
        certified: cert.passed,
        violations: &cert.violations,
        v_range_base: before.v_range(),
        v_range_redispatch: after.v_range(),
        setpoints: records(&r.v_set),
    };
    print_stdout(&to_json(&summary))
}

pub fn read_setpoints(path: &Path) -> Result<Vec<(u32, f64)>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let recs: Vec<SetpointRecord> =
        serde_json::from_str(&text).with_context(|| format!("parsing setpoints {}", path.display()))?;
    Ok(recs.into_iter().map(|r| (r.bus, r.v_set)).collect())
}

fn contingency(args: &ContingencyArgs, m: &mut Manifest) -> Result<()> {
    let common = &args.common;
    if !(args.bin_width > 0.0 && args.bin_width.is_finite()) {
        bail!("--bin-width must be positive, got {}", args.bin_width);
    }
    let case = load_case(common, m)?;
    let setpoints = match &args.setpoints {
        Some(p) => read_setpoints(p)?,
        None => case.setpoints(),
    };
    case.with_setpoints(&setpoints).context("applying setpoints")?;
    let filter = match args.filter {
        FilterArg::Branches => ContingencyFilter::Branches,
        FilterArg::Gens => ContingencyFilter::Generators,
        FilterArg::All => ContingencyFilter::All,
    };
    let config = ContingencyConfig {
        solver: common.solver()?,
        homotopy: common.homotopy()?,
    };
    m.resolve("solver", SolverEcho::from(&config.solver));
    m.resolve("homotopy", config.homotopy);
    let specs = enumerate_n1(&case, filter);
    let results = m.time("sweep", || sweep(&case, &specs, &setpoints, &config));
    let report = summarize(&results, args.bin_width)?;
    log::info!(
        "{} contingencies: {} converged, {} failed ({} islanded)",
        report.total,
        report.converged,
        report.failed,
        report.islanded
    );

    let out = common.out.clone().unwrap_or_else(|| PathBuf::from("contingency.csv"));
    write_file(common, m, &out, &contingency_csv(&results))?;
    write_file(common, m, &sibling(&out, "histogram"), &histogram_csv(&report))?;
    print_stdout(&to_json(&report))
}

#[derive(Serialize)]
struct ScaleSummary {
    factor: f64,
    total_load_mw_before: f64,
    total_load_mw_after: f64,
}

fn scale(common: &CommonArgs, m: &mut Manifest) -> Result<()> {
    let Some(factor) = common.scale_load else {
        bail!("scale needs --scale-load");
    };
    let case = load_unscaled(common, m)?;
    let scaled = scale_load(&case, factor)?;
    let body = write_native_json(&scaled);
    let summary = ScaleSummary {
        factor,
        total_load_mw_before: case.total_load_mw(),
        total_load_mw_after: scaled.total_load_mw(),
    };
    match &common.out {
        Some(path) => {
            write_file(common, m, path, &body)?;
            print_stdout(&to_json(&summary))
        }
        None => {
            eprintln!(
                "total load {:.4} MW -> {:.4} MW",
                summary.total_load_mw_before, summary.total_load_mw_after
            );
            print_stdout(body.trim_end())
        }
    }
}
