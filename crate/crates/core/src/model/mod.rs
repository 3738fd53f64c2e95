//! Per-unit network model.
//!
//! A [`GridCase`] is produced once by [`parse_case`] (or [`GridCase::new`])
//! and never mutated afterwards. Operations that change the network, such as
//! [`scale_load`] and [`apply_outage`], return a fresh case.

mod json;
mod matpower;

use std::collections::{HashMap, VecDeque};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::contingency::{ContingencyKind, ContingencySpec};
use crate::error::{Error, Result};

pub use json::{read_native_json, write_native_json};
pub use matpower::read_matpower;

/// Voltage band applied to buses that do not carry their own bounds.
pub const DEFAULT_BAND: (f64, f64) = (0.85, 1.15);
/// System base used when a file does not state one.
pub const DEFAULT_BASE_MVA: f64 = 100.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BusKind {
    Slack,
    PV,
    PQ,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    #[default]
    In,
    Out,
}

impl Status {
    pub fn is_in(self) -> bool {
        self == Status::In
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bus {
    pub id: u32,
    pub kind: BusKind,
    pub base_kv: f64,
    pub v_init_mag: f64,
    /// Radians.
    pub v_init_ang: f64,
    pub v_soft_min: f64,
    pub v_soft_max: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Branch {
    pub from: u32,
    pub to: u32,
    pub r: f64,
    pub x: f64,
    /// Total line charging susceptance, split half to each end.
    pub b_sh: f64,
    /// Off-nominal turns ratio on the from side.
    pub tap: f64,
    pub status: Status,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generator {
    pub bus: u32,
    pub p_set: f64,
    pub v_set_init: f64,
    pub q_min: f64,
    pub q_max: f64,
    pub status: Status,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Load {
    pub bus: u32,
    pub p: f64,
    pub q: f64,
    pub status: Status,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Shunt {
    pub bus: u32,
    pub g: f64,
    pub b: f64,
    pub status: Status,
}

/// Raw pieces of a case, before validation. All values per-unit.
#[derive(Debug, Clone, PartialEq)]
pub struct CaseParts {
    pub base_mva: f64,
    pub buses: Vec<Bus>,
    pub branches: Vec<Branch>,
    pub generators: Vec<Generator>,
    pub loads: Vec<Load>,
    pub shunts: Vec<Shunt>,
    pub default_bounds: (f64, f64),
}

/// In-service generators sharing one bus, merged into a single regulated
/// injection with one voltage setpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct GenGroup {
    /// Bus index (position in [`GridCase::buses`]).
    pub bus: usize,
    /// Indices into [`GridCase::generators`].
    pub members: Vec<usize>,
    pub p_set: f64,
    pub q_min: f64,
    pub q_max: f64,
    pub v_set: f64,
}

impl GenGroup {
    /// Equal reactive bounds pin the output; the group is then a PQ injection.
    pub fn fixed_q(&self) -> bool {
        self.q_min == self.q_max
    }

    pub fn q_mid(&self) -> f64 {
        let mid = 0.5 * (self.q_min + self.q_max);
        if mid.is_finite() {
            mid
        } else {
            0.0
        }
    }
}

/// Validated per-unit network.
#[derive(Debug, Clone, PartialEq)]
pub struct GridCase {
    parts: CaseParts,
    index: HashMap<u32, usize>,
    groups: Vec<GenGroup>,
}

/// Result of the connectivity check from the slack bus.
#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    /// Per bus index: reachable from the slack through in-service branches.
    pub energized: Vec<bool>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CaseFormat {
    NativeJson,
    MatpowerText,
}

impl CaseFormat {
    /// `.m` files are MATPOWER text, everything else native JSON.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("m") => CaseFormat::MatpowerText,
            _ => CaseFormat::NativeJson,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParseOptions {
    pub default_bounds: (f64, f64),
    pub default_base_mva: f64,
}

impl Default for ParseOptions {
    fn default() -> Self {
        ParseOptions {
            default_bounds: DEFAULT_BAND,
            default_base_mva: DEFAULT_BASE_MVA,
        }
    }
}

/// Reads, converts to per-unit, and validates a case file.
pub fn parse_case(path: impl AsRef<Path>, format: CaseFormat) -> Result<GridCase> {
    parse_case_with(path, format, &ParseOptions::default())
}

pub fn parse_case_with(path: impl AsRef<Path>, format: CaseFormat, opts: &ParseOptions) -> Result<GridCase> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_case_str(&text, format, opts)
}

pub fn parse_case_str(text: &str, format: CaseFormat, opts: &ParseOptions) -> Result<GridCase> {
    let parts = match format {
        CaseFormat::NativeJson => read_native_json(text, opts)?,
        CaseFormat::MatpowerText => read_matpower(text, opts)?,
    };
    let case = GridCase::new(parts)?;
    case.topology()?;
    Ok(case)
}

fn finite(name: &str, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::validation(format!("{name} is not finite")))
    }
}

impl GridCase {
    /// Validates the structural invariants. Island checks are separate, see
    /// [`GridCase::topology`], so that outage cases can be built and then
    /// rejected downstream.
    pub fn new(parts: CaseParts) -> Result<Self> {
        if !(parts.base_mva > 0.0 && parts.base_mva.is_finite()) {
            return Err(Error::validation("base_mva must be positive"));
        }
        let (dlo, dhi) = parts.default_bounds;
        if !(dlo < dhi) {
            return Err(Error::validation("default bounds must satisfy min < max"));
        }
        if parts.buses.is_empty() {
            return Err(Error::validation("case has no buses"));
        }
        let mut index = HashMap::with_capacity(parts.buses.len());
        let mut slack_count = 0;
        for (i, bus) in parts.buses.iter().enumerate() {
            if index.insert(bus.id, i).is_some() {
                return Err(Error::validation(format!("duplicate bus id {}", bus.id)));
            }
            if !(bus.base_kv > 0.0 && bus.base_kv.is_finite()) {
                return Err(Error::validation(format!("bus {} base_kv must be positive", bus.id)));
            }
            finite("v_init_mag", bus.v_init_mag)?;
            finite("v_init_ang", bus.v_init_ang)?;
            if !(bus.v_soft_min < bus.v_soft_max) || !bus.v_soft_min.is_finite() || !bus.v_soft_max.is_finite() {
                return Err(Error::validation(format!(
                    "bus {} voltage band requires v_soft_min < v_soft_max",
                    bus.id
                )));
            }
            if bus.kind == BusKind::Slack {
                slack_count += 1;
            }
        }
        match slack_count {
            0 => return Err(Error::validation("missing slack bus")),
            1 => {}
            n => return Err(Error::validation(format!("{n} slack buses, expected exactly one"))),
        }
        let lookup = |id: u32, what: &str| -> Result<usize> {
            index
                .get(&id)
                .copied()
                .ok_or_else(|| Error::validation(format!("{what} references unknown bus {id}")))
        };
        for br in &parts.branches {
            if !index.contains_key(&br.from) || !index.contains_key(&br.to) {
                return Err(Error::validation(format!(
                    "dangling branch endpoint ({} -> {})",
                    br.from, br.to
                )));
            }
            if br.from == br.to {
                return Err(Error::validation(format!("branch {0} -> {0} is a self loop", br.from)));
            }
            finite("branch r", br.r)?;
            finite("branch x", br.x)?;
            finite("branch b_sh", br.b_sh)?;
            if !(br.tap > 0.0 && br.tap.is_finite()) {
                return Err(Error::validation(format!(
                    "branch {} -> {} tap must be positive",
                    br.from, br.to
                )));
            }
            if br.status.is_in() && br.r * br.r + br.x * br.x <= 0.0 {
                return Err(Error::validation(format!(
                    "branch {} -> {} has zero impedance",
                    br.from, br.to
                )));
            }
        }
        for g in &parts.generators {
            let bi = lookup(g.bus, "generator")?;
            finite("generator p_set", g.p_set)?;
            if !(g.v_set_init > 0.0 && g.v_set_init.is_finite()) {
                return Err(Error::validation(format!(
                    "generator at bus {} needs a positive voltage setpoint",
                    g.bus
                )));
            }
            if g.q_min.is_nan() || g.q_max.is_nan() || g.q_min > g.q_max {
                return Err(Error::validation(format!(
                    "generator at bus {} requires q_min <= q_max",
                    g.bus
                )));
            }
            if g.status.is_in() && parts.buses[bi].kind == BusKind::PQ {
                return Err(Error::validation(format!("in-service generator on PQ bus {}", g.bus)));
            }
        }
        for l in &parts.loads {
            lookup(l.bus, "load")?;
            finite("load p", l.p)?;
            finite("load q", l.q)?;
        }
        for s in &parts.shunts {
            lookup(s.bus, "shunt")?;
            finite("shunt g", s.g)?;
            finite("shunt b", s.b)?;
        }

        let mut groups: Vec<GenGroup> = Vec::new();
        let mut group_at: HashMap<usize, usize> = HashMap::new();
        for (gi, g) in parts.generators.iter().enumerate() {
            if !g.status.is_in() {
                continue;
            }
            let bi = index[&g.bus];
            match group_at.get(&bi) {
                Some(&k) => {
                    let grp = &mut groups[k];
                    grp.members.push(gi);
                    grp.p_set += g.p_set;
                    grp.q_min += g.q_min;
                    grp.q_max += g.q_max;
                    if (grp.v_set - g.v_set_init).abs() > 1e-12 {
                        log::warn!(
                            "bus {}: generators disagree on voltage setpoint, using {}",
                            g.bus,
                            grp.v_set
                        );
                    }
                }
                None => {
                    group_at.insert(bi, groups.len());
                    groups.push(GenGroup {
                        bus: bi,
                        members: vec![gi],
                        p_set: g.p_set,
                        q_min: g.q_min,
                        q_max: g.q_max,
                        v_set: g.v_set_init,
                    });
                }
            }
        }
        for (bi, bus) in parts.buses.iter().enumerate() {
            if bus.kind == BusKind::PV && !group_at.contains_key(&bi) {
                return Err(Error::validation(format!(
                    "PV bus {} has no in-service generator",
                    bus.id
                )));
            }
        }
        groups.sort_by_key(|g| g.bus);

        Ok(GridCase { parts, index, groups })
    }

    pub fn base_mva(&self) -> f64 {
        self.parts.base_mva
    }
    pub fn buses(&self) -> &[Bus] {
        &self.parts.buses
    }
    pub fn branches(&self) -> &[Branch] {
        &self.parts.branches
    }
    pub fn generators(&self) -> &[Generator] {
        &self.parts.generators
    }
    pub fn loads(&self) -> &[Load] {
        &self.parts.loads
    }
    pub fn shunts(&self) -> &[Shunt] {
        &self.parts.shunts
    }
    pub fn default_bounds(&self) -> (f64, f64) {
        self.parts.default_bounds
    }
    pub fn parts(&self) -> &CaseParts {
        &self.parts
    }
    pub fn into_parts(self) -> CaseParts {
        self.parts
    }

    pub fn bus_index(&self, id: u32) -> Option<usize> {
        self.index.get(&id).copied()
    }

    pub fn slack_index(&self) -> usize {
        self.parts
            .buses
            .iter()
            .position(|b| b.kind == BusKind::Slack)
            .expect("validated case has a slack bus")
    }

    /// Generator groups ordered by bus index.
    pub fn generator_groups(&self) -> &[GenGroup] {
        &self.groups
    }

    pub fn group_at_bus(&self, bus: usize) -> Option<&GenGroup> {
        self.groups.iter().find(|g| g.bus == bus)
    }

    /// Total in-service active load, MW.
    pub fn total_load_mw(&self) -> f64 {
        self.parts
            .loads
            .iter()
            .filter(|l| l.status.is_in())
            .map(|l| l.p)
            .sum::<f64>()
            * self.parts.base_mva
    }

    /// Flood fill from the slack over in-service branches. Buses holding
    /// in-service load or generation must be reached; empty unreachable
    /// buses are left de-energized.
    pub fn topology(&self) -> Result<Topology> {
        let n = self.parts.buses.len();
        let mut adj = vec![Vec::new(); n];
        for br in self.parts.branches.iter().filter(|b| b.status.is_in()) {
            let f = self.index[&br.from];
            let t = self.index[&br.to];
            adj[f].push(t);
            adj[t].push(f);
        }
        let mut energized = vec![false; n];
        let slack = self.slack_index();
        energized[slack] = true;
        let mut queue = VecDeque::from([slack]);
        while let Some(b) = queue.pop_front() {
            for &nb in &adj[b] {
                if !energized[nb] {
                    energized[nb] = true;
                    queue.push_back(nb);
                }
            }
        }
        let stranded = |bus: u32| !energized[self.index[&bus]];
        let injection = self
            .parts
            .loads
            .iter()
            .filter(|l| l.status.is_in())
            .map(|l| l.bus)
            .chain(self.parts.generators.iter().filter(|g| g.status.is_in()).map(|g| g.bus));
        for bus in injection {
            if stranded(bus) {
                return Err(Error::Island { bus });
            }
        }
        Ok(Topology { energized })
    }

    /// Copy of this case with generator setpoints replaced per bus id.
    /// Buses without a generator group are ignored with a warning.
    pub fn with_setpoints(&self, setpoints: &[(u32, f64)]) -> Result<GridCase> {
        let mut parts = self.parts.clone();
        for &(bus, v) in setpoints {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!("setpoint {v} at bus {bus}")));
            }
            let mut hit = false;
            for g in parts.generators.iter_mut().filter(|g| g.bus == bus) {
                g.v_set_init = v;
                hit = true;
            }
            if !hit {
                log::warn!("setpoint given for bus {bus} without generators; ignored");
            }
        }
        GridCase::new(parts)
    }

    /// Current setpoints of every generator group as `(bus id, v_set)`.
    pub fn setpoints(&self) -> Vec<(u32, f64)> {
        self.groups
            .iter()
            .map(|g| (self.parts.buses[g.bus].id, g.v_set))
            .collect()
    }
}

/// Multiplies every in-service load by `factor`.
pub fn scale_load(case: &GridCase, factor: f64) -> Result<GridCase> {
    if !(factor > 0.0 && factor.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "load scale factor must be positive, got {factor}"
        )));
    }
    let mut parts = case.parts.clone();
    for l in parts.loads.iter_mut().filter(|l| l.status.is_in()) {
        l.p *= factor;
        l.q *= factor;
    }
    GridCase::new(parts)
}

/// Takes one branch or generator group out of service. A generator outage
/// removes every generator on the bus and re-types the bus as PQ.
pub fn apply_outage(case: &GridCase, outage: &ContingencySpec) -> Result<GridCase> {
    let mut parts = case.parts.clone();
    match outage.kind {
        ContingencyKind::BranchOutage => {
            let br = parts
                .branches
                .get_mut(outage.element)
                .ok_or_else(|| Error::InvalidArgument(format!("unknown branch #{}", outage.element)))?;
            if !br.status.is_in() {
                return Err(Error::InvalidArgument(format!(
                    "branch #{} is already out of service",
                    outage.element
                )));
            }
            br.status = Status::Out;
        }
        ContingencyKind::GeneratorOutage => {
            let bus_id = u32::try_from(outage.element)
                .map_err(|_| Error::InvalidArgument(format!("unknown bus {}", outage.element)))?;
            let bi = case
                .bus_index(bus_id)
                .ok_or_else(|| Error::InvalidArgument(format!("unknown bus {bus_id}")))?;
            let mut hit = false;
            for g in parts.generators.iter_mut().filter(|g| g.bus == bus_id) {
                if g.status.is_in() {
                    g.status = Status::Out;
                    hit = true;
                }
            }
            if !hit {
                return Err(Error::InvalidArgument(format!(
                    "no in-service generator at bus {bus_id}"
                )));
            }
            if parts.buses[bi].kind == BusKind::Slack {
                return Err(Error::InvalidArgument(format!(
                    "outage of the slack generator at bus {bus_id} is not supported"
                )));
            }
            parts.buses[bi].kind = BusKind::PQ;
        }
    }
    GridCase::new(parts)
}
