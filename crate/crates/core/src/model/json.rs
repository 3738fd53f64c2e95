//! Native JSON case format.
//!
//! Powers are stored in MW / MVAr (shunts as MW / MVAr drawn at 1 pu),
//! impedances in per-unit, angles in degrees. Conversion to the internal
//! per-unit radian model happens here and nowhere else.

use serde::{Deserialize, Serialize};

use super::{Branch, Bus, BusKind, CaseParts, Generator, GridCase, Load, ParseOptions, Shunt, Status};
use crate::error::{Error, Result};

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CaseFile {
    #[serde(default)]
    base_mva: Option<f64>,
    #[serde(default)]
    default_bounds: Option<[f64; 2]>,
    buses: Vec<BusRecord>,
    #[serde(default)]
    branches: Vec<BranchRecord>,
    #[serde(default)]
    generators: Vec<GeneratorRecord>,
    #[serde(default)]
    loads: Vec<LoadRecord>,
    #[serde(default)]
    shunts: Vec<ShuntRecord>,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BusRecord {
    id: u32,
    kind: BusKind,
    base_kv: f64,
    #[serde(default = "one")]
    v_init_mag: f64,
    #[serde(default)]
    v_init_ang: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    v_soft_min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    v_soft_max: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BranchRecord {
    from: u32,
    to: u32,
    r: f64,
    x: f64,
    #[serde(default)]
    b_sh: f64,
    #[serde(default = "one")]
    tap: f64,
    #[serde(default)]
    status: Status,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GeneratorRecord {
    bus: u32,
    p_set: f64,
    #[serde(default = "one")]
    v_set_init: f64,
    q_min: f64,
    q_max: f64,
    #[serde(default)]
    status: Status,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LoadRecord {
    bus: u32,
    p: f64,
    #[serde(default)]
    q: f64,
    #[serde(default)]
    status: Status,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ShuntRecord {
    bus: u32,
    #[serde(default)]
    g: f64,
    #[serde(default)]
    b: f64,
    #[serde(default)]
    status: Status,
}

pub fn read_native_json(text: &str, opts: &ParseOptions) -> Result<CaseParts> {
    let file: CaseFile = serde_json::from_str(text).map_err(|e| Error::Parse {
        line: e.line(),
        message: format!("{e} (column {})", e.column()),
    })?;
    let base = file.base_mva.unwrap_or(opts.default_base_mva);
    if !(base > 0.0 && base.is_finite()) {
        return Err(Error::validation("base_mva must be positive"));
    }
    let (dlo, dhi) = file
        .default_bounds
        .map(|[lo, hi]| (lo, hi))
        .unwrap_or(opts.default_bounds);
    Ok(CaseParts {
        base_mva: base,
        default_bounds: (dlo, dhi),
        buses: file
            .buses
            .into_iter()
            .map(|b| Bus {
                id: b.id,
                kind: b.kind,
                base_kv: b.base_kv,
                v_init_mag: b.v_init_mag,
                v_init_ang: b.v_init_ang.to_radians(),
                v_soft_min: b.v_soft_min.unwrap_or(dlo),
                v_soft_max: b.v_soft_max.unwrap_or(dhi),
            })
            .collect(),
        branches: file
            .branches
            .into_iter()
            .map(|b| Branch {
                from: b.from,
                to: b.to,
                r: b.r,
                x: b.x,
                b_sh: b.b_sh,
                tap: b.tap,
                status: b.status,
            })
            .collect(),
        generators: file
            .generators
            .into_iter()
            .map(|g| Generator {
                bus: g.bus,
                p_set: g.p_set / base,
                v_set_init: g.v_set_init,
                q_min: g.q_min / base,
                q_max: g.q_max / base,
                status: g.status,
            })
            .collect(),
        loads: file
            .loads
            .into_iter()
            .map(|l| Load {
                bus: l.bus,
                p: l.p / base,
                q: l.q / base,
                status: l.status,
            })
            .collect(),
        shunts: file
            .shunts
            .into_iter()
            .map(|s| Shunt {
                bus: s.bus,
                g: s.g / base,
                b: s.b / base,
                status: s.status,
            })
            .collect(),
    })
}

/// Serializes a case back to the native JSON format. Every bus is written
/// with explicit bounds, so a re-parse reproduces the case regardless of
/// the reader's default band.
pub fn write_native_json(case: &GridCase) -> String {
    let base = case.base_mva();
    let (dlo, dhi) = case.default_bounds();
    let file = CaseFile {
        base_mva: Some(base),
        default_bounds: Some([dlo, dhi]),
        buses: case
            .buses()
            .iter()
            .map(|b| BusRecord {
                id: b.id,
                kind: b.kind,
                base_kv: b.base_kv,
                v_init_mag: b.v_init_mag,
                v_init_ang: b.v_init_ang.to_degrees(),
                v_soft_min: Some(b.v_soft_min),
                v_soft_max: Some(b.v_soft_max),
            })
            .collect(),
        branches: case
            .branches()
            .iter()
            .map(|b| BranchRecord {
                from: b.from,
                to: b.to,
                r: b.r,
                x: b.x,
                b_sh: b.b_sh,
                tap: b.tap,
                status: b.status,
            })
            .collect(),
        generators: case
            .generators()
            .iter()
            .map(|g| GeneratorRecord {
                bus: g.bus,
                p_set: g.p_set * base,
                v_set_init: g.v_set_init,
                q_min: g.q_min * base,
                q_max: g.q_max * base,
                status: g.status,
            })
            .collect(),
        loads: case
            .loads()
            .iter()
            .map(|l| LoadRecord {
                bus: l.bus,
                p: l.p * base,
                q: l.q * base,
                status: l.status,
            })
            .collect(),
        shunts: case
            .shunts()
            .iter()
            .map(|s| ShuntRecord {
                bus: s.bus,
                g: s.g * base,
                b: s.b * base,
                status: s.status,
            })
            .collect(),
    };
    serde_json::to_string_pretty(&file).expect("case serializes")
}
