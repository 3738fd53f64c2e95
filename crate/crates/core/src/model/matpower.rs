//! Reader for the MATPOWER text case format (`mpc.bus`, `mpc.gen`,
//! `mpc.branch`, `mpc.baseMVA`). Only the columns the model uses are read.

use super::{Branch, Bus, BusKind, CaseParts, Generator, Load, ParseOptions, Shunt, Status};
use crate::error::{Error, Result};

// Column positions (0-based) in the standard layout.
const BUS_COLS: usize = 10; // bus_i type Pd Qd Gs Bs area Vm Va baseKV
const GEN_COLS: usize = 8; // bus Pg Qg Qmax Qmin Vg mBase status
const BRANCH_COLS: usize = 11; // fbus tbus r x b rateA rateB rateC ratio angle status

struct Matrix {
    rows: Vec<(usize, Vec<f64>)>,
}

fn strip_comment(line: &str) -> &str {
    match line.find('%') {
        Some(i) => &line[..i],
        None => line,
    }
}

fn parse_row(text: &str, line: usize) -> Result<Option<Vec<f64>>> {
    let fields: Vec<&str> = text
        .split(|c: char| c.is_whitespace() || c == ',')
        .filter(|s| !s.is_empty())
        .collect();
    if fields.is_empty() {
        return Ok(None);
    }
    fields
        .iter()
        .map(|f| {
            f.parse::<f64>().map_err(|_| Error::Parse {
                line,
                message: format!("expected a number, found `{f}`"),
            })
        })
        .collect::<Result<Vec<_>>>()
        .map(Some)
}

/// Splits the file into named numeric matrices and scalar assignments.
fn scan(text: &str) -> Result<(Option<(usize, f64)>, Vec<(String, Matrix)>)> {
    let mut base = None;
    let mut matrices = Vec::new();
    let mut current: Option<(String, Matrix)> = None;
    let mut skipping_cell = false;

    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = strip_comment(raw).trim();
        if skipping_cell {
            if line.contains('}') {
                skipping_cell = false;
            }
            continue;
        }
        if let Some((_, ref mut m)) = current {
            let (body, done) = match line.find(']') {
                Some(j) => (&line[..j], true),
                None => (line, false),
            };
            for chunk in body.split(';') {
                if let Some(row) = parse_row(chunk, line_no)? {
                    m.rows.push((line_no, row));
                }
            }
            if done {
                matrices.push(current.take().unwrap());
            }
            continue;
        }
        let Some(rest) = line.strip_prefix("mpc.") else {
            continue;
        };
        let Some(eq) = rest.find('=') else {
            continue;
        };
        let name = rest[..eq].trim().to_string();
        let value = rest[eq + 1..].trim();
        if let Some(after) = value.strip_prefix('[') {
            let mut m = Matrix { rows: Vec::new() };
            let (body, done) = match after.find(']') {
                Some(j) => (&after[..j], true),
                None => (after, false),
            };
            for chunk in body.split(';') {
                if let Some(row) = parse_row(chunk, line_no)? {
                    m.rows.push((line_no, row));
                }
            }
            if done {
                matrices.push((name, m));
            } else {
                current = Some((name, m));
            }
        } else if value.starts_with('{') {
            skipping_cell = !value.contains('}');
        } else if name == "baseMVA" {
            let v = value.trim_end_matches(';').trim();
            let parsed = v.parse::<f64>().map_err(|_| Error::Parse {
                line: line_no,
                message: format!("baseMVA is not a number: `{v}`"),
            })?;
            base = Some((line_no, parsed));
        }
    }
    if let Some((name, _)) = current {
        return Err(Error::Parse {
            line: text.lines().count(),
            message: format!("matrix mpc.{name} is not terminated"),
        });
    }
    Ok((base, matrices))
}

fn take<'a>(matrices: &'a [(String, Matrix)], name: &str) -> Result<&'a Matrix> {
    matrices
        .iter()
        .find(|(n, _)| n == name)
        .map(|(_, m)| m)
        .ok_or_else(|| Error::Parse {
            line: 0,
            message: format!("missing mpc.{name} matrix"),
        })
}

fn check_width(m: &Matrix, name: &str, need: usize) -> Result<()> {
    let mut extra = false;
    for (line, row) in &m.rows {
        if row.len() < need {
            return Err(Error::Parse {
                line: *line,
                message: format!("mpc.{name} row has {} columns, need at least {need}", row.len()),
            });
        }
        extra |= row.len() > need;
    }
    if extra {
        log::debug!("mpc.{name}: columns beyond the first {need} are ignored");
    }
    Ok(())
}

fn as_id(v: f64, line: usize) -> Result<u32> {
    if v >= 0.0 && v.fract() == 0.0 && v <= u32::MAX as f64 {
        Ok(v as u32)
    } else {
        Err(Error::Parse {
            line,
            message: format!("`{v}` is not a valid bus number"),
        })
    }
}

fn status(v: f64) -> Status {
    if v > 0.0 {
        Status::In
    } else {
        Status::Out
    }
}

pub fn read_matpower(text: &str, opts: &ParseOptions) -> Result<CaseParts> {
    let (base, matrices) = scan(text)?;
    let base = match base {
        Some((line, b)) if !(b > 0.0 && b.is_finite()) => {
            return Err(Error::Parse {
                line,
                message: "baseMVA must be positive".into(),
            })
        }
        Some((_, b)) => b,
        None => opts.default_base_mva,
    };
    let (dlo, dhi) = opts.default_bounds;

    let bus_m = take(&matrices, "bus")?;
    let gen_m = take(&matrices, "gen")?;
    let branch_m = take(&matrices, "branch")?;
    check_width(bus_m, "bus", BUS_COLS)?;
    check_width(gen_m, "gen", GEN_COLS)?;
    check_width(branch_m, "branch", BRANCH_COLS)?;

    let mut buses = Vec::with_capacity(bus_m.rows.len());
    let mut loads = Vec::new();
    let mut shunts = Vec::new();
    let mut unspecified_kv = 0;
    for (line, row) in &bus_m.rows {
        let id = as_id(row[0], *line)?;
        let kind = match row[1] as i64 {
            1 => BusKind::PQ,
            2 => BusKind::PV,
            3 => BusKind::Slack,
            t => {
                return Err(Error::Parse {
                    line: *line,
                    message: format!("unsupported bus type {t} at bus {id}"),
                })
            }
        };
        let mut base_kv = row[9];
        if base_kv <= 0.0 {
            log::debug!("bus {id}: baseKV {base_kv} unspecified, using 1 kV");
            unspecified_kv += 1;
            base_kv = 1.0;
        }
        buses.push(Bus {
            id,
            kind,
            base_kv,
            v_init_mag: row[7],
            v_init_ang: row[8].to_radians(),
            v_soft_min: dlo,
            v_soft_max: dhi,
        });
        if row[2] != 0.0 || row[3] != 0.0 {
            loads.push(Load {
                bus: id,
                p: row[2] / base,
                q: row[3] / base,
                status: Status::In,
            });
        }
        if row[4] != 0.0 || row[5] != 0.0 {
            shunts.push(Shunt {
                bus: id,
                g: row[4] / base,
                b: row[5] / base,
                status: Status::In,
            });
        }
    }
    if unspecified_kv > 0 {
        log::warn!("{unspecified_kv} bus(es) without baseKV, using 1 kV");
    }

    let mut generators = Vec::with_capacity(gen_m.rows.len());
    for (line, row) in &gen_m.rows {
        generators.push(Generator {
            bus: as_id(row[0], *line)?,
            p_set: row[1] / base,
            q_max: row[3] / base,
            q_min: row[4] / base,
            v_set_init: row[5],
            status: status(row[7]),
        });
    }

    // A PV bus whose generators are all out behaves as a load bus.
    for bus in buses.iter_mut().filter(|b| b.kind == BusKind::PV) {
        if !generators.iter().any(|g| g.bus == bus.id && g.status.is_in()) {
            log::warn!("bus {}: PV bus without in-service generator treated as PQ", bus.id);
            bus.kind = BusKind::PQ;
        }
    }

    let mut branches = Vec::with_capacity(branch_m.rows.len());
    for (line, row) in &branch_m.rows {
        if row[9] != 0.0 {
            log::warn!("line {line}: phase shift angle {} ignored", row[9]);
        }
        branches.push(Branch {
            from: as_id(row[0], *line)?,
            to: as_id(row[1], *line)?,
            r: row[2],
            x: row[3],
            b_sh: row[4],
            tap: if row[8] == 0.0 { 1.0 } else { row[8] },
            status: status(row[10]),
        });
    }

    Ok(CaseParts {
        base_mva: base,
        buses,
        branches,
        generators,
        loads,
        shunts,
        default_bounds: (dlo, dhi),
    })
}
