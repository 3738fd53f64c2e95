//! Plot-ready CSV and JSON output.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::contingency::{ContingencyKind, ContingencyResult, DistributionReport, Histogram};
use crate::error::{Error, Result};
use crate::model::GridCase;
use crate::pf::PowerFlowSolution;

/// 17 significant digits, enough for an exact round trip.
pub fn num(v: f64) -> String {
    format!("{v:.16e}")
}

fn write(path: &Path, body: &str) -> Result<()> {
    fs::write(path, body).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

fn kv_match(kv: f64, filter: Option<&[f64]>) -> bool {
    filter.is_none_or(|f| f.iter().any(|&k| (k - kv).abs() < 1e-6))
}

/// Before/after magnitude table, one row per bus passing `kv_filter`.
pub fn voltage_profile_csv(
    case: &GridCase,
    before: &PowerFlowSolution,
    after: &PowerFlowSolution,
    kv_filter: Option<&[f64]>,
) -> Result<String> {
    let n = case.buses().len();
    if before.v.len() != n || after.v.len() != n {
        return Err(Error::InvalidArgument(format!(
            "solutions cover {} and {} buses, case has {n}",
            before.v.len(),
            after.v.len()
        )));
    }
    if before.energized != after.energized {
        return Err(Error::InvalidArgument("solutions energize different bus sets".into()));
    }
    let mut out = String::from("bus,base_kv,v_base,v_redispatch\n");
    for (i, bus) in case.buses().iter().enumerate() {
        if !before.energized[i] || !kv_match(bus.base_kv, kv_filter) {
            continue;
        }
        writeln!(
            out,
            "{},{},{},{}",
            bus.id,
            num(bus.base_kv),
            num(before.v[i].norm()),
            num(after.v[i].norm())
        )
        .unwrap();
    }
    Ok(out)
}

pub fn setpoints_csv(before: &[(u32, f64)], after: &[(u32, f64)]) -> Result<String> {
    let mut out = String::from("bus,v_set_base,v_set_redispatch\n");
    if before.len() != after.len() {
        return Err(Error::InvalidArgument("setpoint lists differ in length".into()));
    }
    for (&(b0, v0), &(b1, v1)) in before.iter().zip(after) {
        if b0 != b1 {
            return Err(Error::InvalidArgument(format!("setpoint bus mismatch: {b0} vs {b1}")));
        }
        writeln!(out, "{b0},{},{}", num(v0), num(v1)).unwrap();
    }
    Ok(out)
}

/// Writes the voltage profile to `path` and the setpoint table next to it
/// (`<stem>_setpoints.csv`).
pub fn emit_voltage_profile(
    case: &GridCase,
    before: &PowerFlowSolution,
    after: &PowerFlowSolution,
    setpoints: (&[(u32, f64)], &[(u32, f64)]),
    kv_filter: Option<&[f64]>,
    path: &Path,
) -> Result<()> {
    let profile = voltage_profile_csv(case, before, after, kv_filter)?;
    let sp = setpoints_csv(setpoints.0, setpoints.1)?;
    write(path, &profile)?;
    write(&sibling(path, "setpoints"), &sp)
}

/// `dir/stem_tag.ext` for `dir/stem.ext`.
pub fn sibling(path: &Path, tag: &str) -> std::path::PathBuf {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("out");
    let ext = path.extension().and_then(|s| s.to_str()).unwrap_or("csv");
    path.with_file_name(format!("{stem}_{tag}.{ext}"))
}

pub fn contingency_csv(results: &[ContingencyResult]) -> String {
    let mut out = String::from("label,kind,converged,islanded,v_min,v_max,iterations\n");
    for r in results {
        let kind = match r.spec.kind {
            ContingencyKind::BranchOutage => "branch",
            ContingencyKind::GeneratorOutage => "generator",
        };
        writeln!(
            out,
            "{},{kind},{},{},{},{},{}",
            r.spec.label,
            r.converged,
            r.islanded,
            num(r.v_min),
            num(r.v_max),
            r.iterations
        )
        .unwrap();
    }
    out
}

pub fn histogram_csv(report: &DistributionReport) -> String {
    let mut out = String::from("quantity,lo,hi,count\n");
    let mut rows = |name: &str, h: &Histogram| {
        for b in &h.bins {
            writeln!(out, "{name},{},{},{}", num(b.lo), num(b.hi), b.count).unwrap();
        }
    };
    rows("v_min", &report.v_min);
    rows("v_max", &report.v_max);
    out
}

pub fn to_json<T: serde::Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("report types serialize")
}

pub fn write_text(path: &Path, body: &str) -> Result<()> {
    write(path, body)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn formatting_round_trips() {
        for v in [0.1, 1.0 / 3.0, 1.0559012345678901, -2.5e-17, f64::MAX] {
            assert_eq!(num(v).parse::<f64>().unwrap(), v);
        }
    }

    #[test]
    fn sibling_name() {
        assert_eq!(
            sibling(Path::new("/tmp/v.csv"), "setpoints"),
            Path::new("/tmp/v_setpoints.csv")
        );
    }

    #[test]
    fn setpoint_mismatch() {
        assert!(setpoints_csv(&[(1, 1.0)], &[(2, 1.0)]).is_err());
        assert!(setpoints_csv(&[(1, 1.0)], &[]).is_err());
    }
}
