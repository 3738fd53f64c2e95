//! Diode limiter models.
//!
//! Every model maps a value `v` and a band `(lo, hi)` to a net diode current
//! `s = s_min - s_max`: positive below the band (pushing up), negative above
//! it (pushing down). Each returns `(s, ds/dv, d²s/dv²)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::GridCase;

/// Largest exponent evaluated exactly; beyond it the exponential continues
/// along its tangent.
pub const EXP_CAP: f64 = 40.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DiodeModel {
    Exponential,
    Hyperbolic,
    Quadratic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum BandMode {
    /// Zero current anywhere inside `[lo, hi]`.
    #[default]
    OneSidedDeadband,
    /// Single breakpoint at `(lo + hi) / 2`.
    MidpointCentered,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum HyperbolicForm {
    /// `ε/(q - lo) + ε/(q - hi)`: the two poles have opposite signs, so the
    /// current is decreasing in `q` with its root at the midpoint.
    #[default]
    Differential,
    /// `ε/(q - lo) - ε/(q - hi)`: positive throughout the band.
    Summed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiodeParams {
    pub model: DiodeModel,
    pub i_o: f64,
    pub kappa: f64,
    pub eps: f64,
    pub a: f64,
    pub band_mode: BandMode,
    pub hyperbolic_form: HyperbolicForm,
}

impl DiodeParams {
    fn with_model(model: DiodeModel) -> Self {
        DiodeParams {
            model,
            i_o: 1.0,
            kappa: 50.0,
            eps: 1e-4,
            a: 100.0,
            band_mode: BandMode::OneSidedDeadband,
            hyperbolic_form: HyperbolicForm::Differential,
        }
    }

    pub fn exponential() -> Self {
        Self::with_model(DiodeModel::Exponential)
    }

    pub fn hyperbolic() -> Self {
        Self::with_model(DiodeModel::Hyperbolic)
    }

    pub fn quadratic() -> Self {
        Self::with_model(DiodeModel::Quadratic)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("i_o", self.i_o),
            ("kappa", self.kappa),
            ("eps", self.eps),
            ("a", self.a),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

/// Capped exponential and its first two derivatives.
fn capped_exp(u: f64) -> (f64, f64, f64) {
    if u <= EXP_CAP {
        let e = u.exp();
        (e, e, e)
    } else {
        let e = EXP_CAP.exp();
        (e * (1.0 + (u - EXP_CAP)), e, 0.0)
    }
}

pub fn exp_current(v: f64, lo: f64, hi: f64, p: &DiodeParams) -> (f64, f64, f64) {
    let k = p.kappa;
    let (e1, d1, dd1) = capped_exp(k * (lo - v));
    let (e2, d2, dd2) = capped_exp(k * (v - hi));
    (
        p.i_o * (e1 - e2),
        p.i_o * (-k * d1 - k * d2),
        p.i_o * (k * k * dd1 - k * k * dd2),
    )
}

/// Barrier current; only defined strictly inside `(lo, hi)`.
pub fn hyp_current(q: f64, lo: f64, hi: f64, p: &DiodeParams) -> Result<(f64, f64, f64)> {
    if !(q > lo && q < hi) {
        return Err(Error::LimiterFault { value: q, lo, hi });
    }
    let e = p.eps;
    let (ul, uh) = (q - lo, q - hi);
    let sign = match p.hyperbolic_form {
        HyperbolicForm::Differential => 1.0,
        HyperbolicForm::Summed => -1.0,
    };
    Ok((
        e / ul + sign * e / uh,
        -e / (ul * ul) - sign * e / (uh * uh),
        2.0 * e / (ul * ul * ul) + sign * 2.0 * e / (uh * uh * uh),
    ))
}

pub fn quad_current(v: f64, lo: f64, hi: f64, p: &DiodeParams) -> (f64, f64, f64) {
    let a = p.a;
    match p.band_mode {
        BandMode::OneSidedDeadband => {
            if v < lo {
                (a * (lo - v) * (lo - v), -2.0 * a * (lo - v), 2.0 * a)
            } else if v > hi {
                (-a * (v - hi) * (v - hi), -2.0 * a * (v - hi), -2.0 * a)
            } else {
                (0.0, 0.0, 0.0)
            }
        }
        BandMode::MidpointCentered => {
            let d = v - 0.5 * (lo + hi);
            if d < 0.0 {
                (a * d * d, 2.0 * a * d, 2.0 * a)
            } else {
                (-a * d * d, -2.0 * a * d, -2.0 * a)
            }
        }
    }
}

/// Dispatches on `p.model`.
pub fn diode_current(v: f64, lo: f64, hi: f64, p: &DiodeParams) -> Result<(f64, f64, f64)> {
    match p.model {
        DiodeModel::Exponential => Ok(exp_current(v, lo, hi, p)),
        DiodeModel::Hyperbolic => hyp_current(v, lo, hi, p),
        DiodeModel::Quadratic => Ok(quad_current(v, lo, hi, p)),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Hardness {
    Soft,
    Hard,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LimitTarget {
    /// Voltage magnitude at a bus index.
    Voltage { bus: usize },
    /// Reactive output of a generator group (index into the case's groups).
    Reactive { group: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LimiterState {
    pub target: LimitTarget,
    pub lo: f64,
    pub hi: f64,
    pub s: f64,
    pub params: DiodeParams,
    pub hardness: Hardness,
}

impl LimiterState {
    pub fn current(&self, value: f64) -> Result<(f64, f64, f64)> {
        diode_current(value, self.lo, self.hi, &self.params)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LimiterConfig {
    /// Model for voltage limiters; must not be hyperbolic.
    pub soft: DiodeParams,
    /// Parameters of the hyperbolic reactive-power limiters.
    pub hard: DiodeParams,
    /// Restrict voltage limiters to buses at these nominal voltages.
    pub kv_filter: Option<Vec<f64>>,
    /// Replace every bus band with this one.
    pub band: Option<(f64, f64)>,
    pub limit_slack_q: bool,
    pub voltage_limits: bool,
    pub reactive_limits: bool,
}

impl Default for LimiterConfig {
    fn default() -> Self {
        LimiterConfig {
            soft: DiodeParams::quadratic(),
            hard: DiodeParams::hyperbolic(),
            kv_filter: None,
            band: None,
            limit_slack_q: false,
            voltage_limits: true,
            reactive_limits: true,
        }
    }
}

impl LimiterConfig {
    /// No limiters at all: the problem collapses to power flow.
    pub fn none() -> Self {
        LimiterConfig {
            voltage_limits: false,
            reactive_limits: false,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.soft.validate()?;
        self.hard.validate()?;
        if self.soft.model == DiodeModel::Hyperbolic {
            return Err(Error::InvalidArgument(
                "voltage limiters take the exponential or quadratic model".into(),
            ));
        }
        if self.hard.model != DiodeModel::Hyperbolic {
            return Err(Error::InvalidArgument("reactive limiters must be hyperbolic".into()));
        }
        if let Some((lo, hi)) = self.band {
            if !(lo < hi) {
                return Err(Error::InvalidArgument(format!("band [{lo}, {hi}] requires lo < hi")));
            }
        }
        Ok(())
    }
}

fn kv_matches(kv: f64, filter: &[f64]) -> bool {
    filter.iter().any(|f| (kv - f).abs() <= 1e-6 * f.abs().max(1.0))
}

/// Soft voltage limiters on energized buses (filtered by nominal voltage),
/// then hard reactive limiters on generator groups with a usable band.
pub fn attach_limiters(case: &GridCase, config: &LimiterConfig) -> Vec<LimiterState> {
    let energized = case
        .topology()
        .map(|t| t.energized)
        .unwrap_or_else(|_| vec![true; case.buses().len()]);
    let mut out = Vec::new();
    if config.voltage_limits {
        for (b, bus) in case.buses().iter().enumerate() {
            if !energized[b] {
                continue;
            }
            if let Some(filter) = &config.kv_filter {
                if !kv_matches(bus.base_kv, filter) {
                    continue;
                }
            }
            let (lo, hi) = config.band.unwrap_or((bus.v_soft_min, bus.v_soft_max));
            out.push(LimiterState {
                target: LimitTarget::Voltage { bus: b },
                lo,
                hi,
                s: 0.0,
                params: config.soft,
                hardness: Hardness::Soft,
            });
        }
    }
    if config.reactive_limits {
        let slack = case.slack_index();
        for (g, grp) in case.generator_groups().iter().enumerate() {
            let usable = grp.q_min.is_finite() && grp.q_max.is_finite() && grp.q_min < grp.q_max;
            if !usable || (grp.bus == slack && !config.limit_slack_q) {
                continue;
            }
            out.push(LimiterState {
                target: LimitTarget::Reactive { group: g },
                lo: grp.q_min,
                hi: grp.q_max,
                s: 0.0,
                params: config.hard,
                hardness: Hardness::Hard,
            });
        }
    }
    out
}
