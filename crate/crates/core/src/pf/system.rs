use num_complex::Complex64;

use crate::error::Result;
use crate::model::{BusKind, GenGroup, GridCase};
use crate::sparse::StampMatrix;

/// Series/charging data of one in-service branch between energized buses.
#[derive(Debug, Clone, PartialEq)]
pub struct BranchStamp {
    pub from: usize,
    pub to: usize,
    pub y_series: Complex64,
    pub half_charging: f64,
    pub tap: f64,
}

/// Variable layout of the split real/imaginary circuit.
///
/// Each energized non-slack bus owns two adjacent slots `(V_R, V_I)` and the
/// matching pair of KCL rows; each regulated generator group off the slack
/// owns one `Q` slot whose row is the magnitude constraint. The slack
/// voltage is a fixed source.
#[derive(Debug, Clone)]
pub struct SplitCircuitSystem {
    pub(crate) n_vars: usize,
    pub(crate) bus_ids: Vec<u32>,
    pub(crate) slack: usize,
    pub(crate) slack_voltage: Complex64,
    pub(crate) vr_slot: Vec<Option<usize>>,
    pub(crate) groups: Vec<GenGroup>,
    pub(crate) group_of_bus: Vec<Option<usize>>,
    pub(crate) q_slot: Vec<Option<usize>>,
    pub(crate) energized: Vec<bool>,
    pub(crate) branches: Vec<BranchStamp>,
    pub(crate) shunt: Vec<Complex64>,
    pub(crate) load: Vec<Complex64>,
    pub(crate) n_generators: usize,
    pub(crate) generator_q_bounds: Vec<(f64, f64)>,
    pub(crate) pattern: Vec<(usize, usize)>,
}

impl SplitCircuitSystem {
    pub fn n_vars(&self) -> usize {
        self.n_vars
    }
    pub fn n_buses(&self) -> usize {
        self.bus_ids.len()
    }
    pub fn slack(&self) -> usize {
        self.slack
    }
    pub fn slack_voltage(&self) -> Complex64 {
        self.slack_voltage
    }
    /// `(V_R, V_I)` slots of a bus, `None` for the slack or de-energized buses.
    pub fn voltage_slots(&self, bus: usize) -> Option<(usize, usize)> {
        self.vr_slot[bus].map(|k| (k, k + 1))
    }
    pub fn q_slot(&self, group: usize) -> Option<usize> {
        self.q_slot[group]
    }
    pub fn groups(&self) -> &[GenGroup] {
        &self.groups
    }
    pub fn energized(&self) -> &[bool] {
        &self.energized
    }
    pub fn branch_stamps(&self) -> &[BranchStamp] {
        &self.branches
    }
    /// Sorted `(row, col)` Jacobian pattern.
    pub fn pattern(&self) -> &[(usize, usize)] {
        &self.pattern
    }

    /// Consumed complex power at a bus excluding any variable generator Q:
    /// load minus fixed generation.
    pub(crate) fn fixed_consumption(&self, bus: usize) -> Complex64 {
        let mut s = self.load[bus];
        if let Some(g) = self.group_of_bus[bus] {
            let grp = &self.groups[g];
            if bus != self.slack {
                s -= Complex64::new(grp.p_set, if grp.fixed_q() { grp.q_min } else { 0.0 });
            }
        }
        s
    }
}

/// Lays out the variables, collects per-bus injections, and determines the
/// Jacobian pattern.
pub fn build_system(case: &GridCase) -> Result<SplitCircuitSystem> {
    let topo = case.topology()?;
    let n = case.buses().len();
    let slack = case.slack_index();

    let mut vr_slot = vec![None; n];
    let mut next = 0;
    for (b, bus) in case.buses().iter().enumerate() {
        if topo.energized[b] && bus.kind != BusKind::Slack {
            vr_slot[b] = Some(next);
            next += 2;
        }
    }
    let groups: Vec<GenGroup> = case.generator_groups().to_vec();
    let mut group_of_bus = vec![None; n];
    let mut q_slot = vec![None; groups.len()];
    for (g, grp) in groups.iter().enumerate() {
        group_of_bus[grp.bus] = Some(g);
        if grp.bus != slack && !grp.fixed_q() {
            q_slot[g] = Some(next);
            next += 1;
        }
    }

    let slack_bus = &case.buses()[slack];
    let slack_mag = group_of_bus[slack].map_or(slack_bus.v_init_mag, |g| groups[g].v_set);
    let slack_voltage = Complex64::from_polar(slack_mag, slack_bus.v_init_ang);

    let mut branches = Vec::new();
    for br in case.branches().iter().filter(|b| b.status.is_in()) {
        let from = case.bus_index(br.from).expect("validated");
        let to = case.bus_index(br.to).expect("validated");
        if !(topo.energized[from] && topo.energized[to]) {
            continue;
        }
        branches.push(BranchStamp {
            from,
            to,
            y_series: Complex64::new(br.r, br.x).inv(),
            half_charging: 0.5 * br.b_sh,
            tap: br.tap,
        });
    }
    let mut shunt = vec![Complex64::new(0.0, 0.0); n];
    for s in case.shunts().iter().filter(|s| s.status.is_in()) {
        shunt[case.bus_index(s.bus).expect("validated")] += Complex64::new(s.g, s.b);
    }
    let mut load = vec![Complex64::new(0.0, 0.0); n];
    for l in case.loads().iter().filter(|l| l.status.is_in()) {
        load[case.bus_index(l.bus).expect("validated")] += Complex64::new(l.p, l.q);
    }

    let mut sys = SplitCircuitSystem {
        n_vars: next,
        bus_ids: case.buses().iter().map(|b| b.id).collect(),
        slack,
        slack_voltage,
        vr_slot,
        groups,
        group_of_bus,
        q_slot,
        energized: topo.energized,
        branches,
        shunt,
        load,
        n_generators: case.generators().len(),
        generator_q_bounds: case.generators().iter().map(|g| (g.q_min, g.q_max)).collect(),
        pattern: Vec::new(),
    };

    // Dry-run stamp at flat start to collect the pattern.
    let mut ws = super::Workspace {
        matrix: StampMatrix::growable(sys.n_vars),
        rhs: vec![0.0; sys.n_vars],
    };
    let x = super::newton::flat_start(&sys);
    super::stamps::assemble(&sys, &x, 1.0, &mut ws);
    sys.pattern = ws.matrix.pattern();
    Ok(sys)
}
