//! Device stamps in companion form.
//!
//! Each device adds its Jacobian block `J_d` to the matrix and
//! `J_d x_k - f_d(x_k)` to the right-hand side, so that solving
//! `J x_{k+1} = rhs` is one Newton step on the sum of device residuals.

use num_complex::Complex64;

use super::system::SplitCircuitSystem;
use super::Workspace;

/// Floor on `V_R² + V_I²` inside the injection formulas.
pub const EPS_MAG: f64 = 1e-4;

/// Current drawn by a constant-power injection and its first derivatives.
///
/// `p`, `q` are consumed power; a generator enters with negative sign.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InjectionStamp {
    /// `(I_R, I_I)`.
    pub current: [f64; 2],
    /// `dv[i][j] = ∂I_i / ∂V_j` with index 0 = real, 1 = imaginary.
    pub dv: [[f64; 2]; 2],
    /// `∂(I_R, I_I) / ∂P`.
    pub dp: [f64; 2],
    /// `∂(I_R, I_I) / ∂Q`.
    pub dq: [f64; 2],
}

/// Second derivatives of the injection current, by component.
/// Variable order is `(V_R, V_I, P, Q)`; `P`/`Q` enter linearly.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InjectionHessian {
    pub h: [[[f64; 4]; 4]; 2],
}

pub fn injection(v_r: f64, v_i: f64, p: f64, q: f64) -> InjectionStamp {
    let d = v_r * v_r + v_i * v_i;
    let (f, g, fa, fb, ga, gb) = if d < EPS_MAG {
        (v_r / EPS_MAG, v_i / EPS_MAG, 1.0 / EPS_MAG, 0.0, 0.0, 1.0 / EPS_MAG)
    } else {
        let d2 = d * d;
        (
            v_r / d,
            v_i / d,
            (v_i * v_i - v_r * v_r) / d2,
            -2.0 * v_r * v_i / d2,
            -2.0 * v_r * v_i / d2,
            (v_r * v_r - v_i * v_i) / d2,
        )
    };
    // I_R = P f + Q g, I_I = P g - Q f
    InjectionStamp {
        current: [p * f + q * g, p * g - q * f],
        dv: [[p * fa + q * ga, p * fb + q * gb], [p * ga - q * fa, p * gb - q * fb]],
        dp: [f, g],
        dq: [g, -f],
    }
}

pub fn injection_hessian(v_r: f64, v_i: f64, p: f64, q: f64) -> InjectionHessian {
    let d = v_r * v_r + v_i * v_i;
    let mut h = [[[0.0; 4]; 4]; 2];
    if d < EPS_MAG {
        let inv = 1.0 / EPS_MAG;
        // f = a/ε, g = b/ε: only the P/Q cross terms survive.
        h[0][0][2] = inv;
        h[0][1][3] = inv;
        h[1][1][2] = inv;
        h[1][0][3] = -inv;
    } else {
        let d2 = d * d;
        let d3 = d2 * d;
        let (a, b) = (v_r, v_i);
        let fa = (b * b - a * a) / d2;
        let fb = -2.0 * a * b / d2;
        let ga = fb;
        let gb = -fa;
        let faa = (2.0 * a * a * a - 6.0 * a * b * b) / d3;
        let fab = (6.0 * a * a * b - 2.0 * b * b * b) / d3;
        let fbb = -faa;
        let gaa = fab;
        let gab = fbb;
        let gbb = -fab;
        // I_R = P f + Q g
        h[0][0][0] = p * faa + q * gaa;
        h[0][0][1] = p * fab + q * gab;
        h[0][1][1] = p * fbb + q * gbb;
        h[0][0][2] = fa;
        h[0][1][2] = fb;
        h[0][0][3] = ga;
        h[0][1][3] = gb;
        // I_I = P g - Q f
        h[1][0][0] = p * gaa - q * faa;
        h[1][0][1] = p * gab - q * fab;
        h[1][1][1] = p * gbb - q * fbb;
        h[1][0][2] = ga;
        h[1][1][2] = gb;
        h[1][0][3] = -fa;
        h[1][1][3] = -fb;
    }
    for comp in h.iter_mut() {
        for i in 0..4 {
            for j in 0..i {
                comp[i][j] = comp[j][i];
            }
        }
    }
    InjectionHessian { h }
}

/// Adds `y · V_col` to the KCL rows of `row_bus`. Slack voltages are known
/// and move to the right-hand side.
fn stamp_admittance(sys: &SplitCircuitSystem, ws: &mut Workspace, row_bus: usize, col_bus: usize, y: Complex64) {
    let Some((rr, ri)) = sys.voltage_slots(row_bus) else {
        return;
    };
    if col_bus == sys.slack {
        let i = y * sys.slack_voltage;
        ws.rhs[rr] -= i.re;
        ws.rhs[ri] -= i.im;
        return;
    }
    let Some((cr, ci)) = sys.voltage_slots(col_bus) else {
        return;
    };
    ws.matrix.add(rr, cr, y.re);
    ws.matrix.add(rr, ci, -y.im);
    ws.matrix.add(ri, cr, y.im);
    ws.matrix.add(ri, ci, y.re);
}

/// Branch π-models and shunts with series admittances multiplied by `scale`.
pub(crate) fn stamp_network(sys: &SplitCircuitSystem, scale: f64, ws: &mut Workspace) {
    for br in &sys.branches {
        let ys = br.y_series * scale;
        let jb = Complex64::new(0.0, br.half_charging);
        let t = br.tap;
        stamp_admittance(sys, ws, br.from, br.from, (ys + jb) / (t * t));
        stamp_admittance(sys, ws, br.from, br.to, -ys / t);
        stamp_admittance(sys, ws, br.to, br.from, -ys / t);
        stamp_admittance(sys, ws, br.to, br.to, ys + jb);
    }
    for (b, &y) in sys.shunt.iter().enumerate() {
        if y != Complex64::new(0.0, 0.0) {
            stamp_admittance(sys, ws, b, b, y);
        }
    }
}

/// Iteration-independent stamps of the unmodified network.
pub fn stamp_linear(sys: &SplitCircuitSystem, ws: &mut Workspace) {
    stamp_network(sys, 1.0, ws);
}

/// Constant-power injection at a non-slack bus with fixed `p`, `q`.
pub fn stamp_pq(sys: &SplitCircuitSystem, bus: usize, v_r: f64, v_i: f64, p: f64, q: f64, ws: &mut Workspace) {
    let Some((rr, ri)) = sys.voltage_slots(bus) else {
        return;
    };
    let st = injection(v_r, v_i, p, q);
    let rows = [rr, ri];
    for k in 0..2 {
        ws.matrix.add(rows[k], rr, st.dv[k][0]);
        ws.matrix.add(rows[k], ri, st.dv[k][1]);
        ws.rhs[rows[k]] += st.dv[k][0] * v_r + st.dv[k][1] * v_i - st.current[k];
    }
}

/// Regulated generator group: injection with variable `Q` plus the
/// magnitude row `V_R² + V_I² - V_SET² = 0`.
pub fn stamp_pv(sys: &SplitCircuitSystem, group: usize, x: &[f64], ws: &mut Workspace) {
    let grp = &sys.groups[group];
    let Some(qs) = sys.q_slot[group] else {
        return;
    };
    let Some((rr, ri)) = sys.voltage_slots(grp.bus) else {
        return;
    };
    let (a, b, q_gen) = (x[rr], x[ri], x[qs]);
    let s = sys.fixed_consumption(grp.bus);
    let st = injection(a, b, s.re, s.im - q_gen);
    let rows = [rr, ri];
    for k in 0..2 {
        // ∂I/∂Q_gen = -∂I/∂Q_consumed
        let dqg = -st.dq[k];
        ws.matrix.add(rows[k], rr, st.dv[k][0]);
        ws.matrix.add(rows[k], ri, st.dv[k][1]);
        ws.matrix.add(rows[k], qs, dqg);
        ws.rhs[rows[k]] += st.dv[k][0] * a + st.dv[k][1] * b + dqg * q_gen - st.current[k];
    }
    let (f, ga, gb) = magnitude_residual(a, b, grp.v_set);
    ws.matrix.add(qs, rr, ga);
    ws.matrix.add(qs, ri, gb);
    ws.rhs[qs] += ga * a + gb * b - f;
}

/// `V_R² + V_I² - V_SET²` and its gradient in `(V_R, V_I)`.
pub fn magnitude_residual(v_r: f64, v_i: f64, v_set: f64) -> (f64, f64, f64) {
    (v_r * v_r + v_i * v_i - v_set * v_set, 2.0 * v_r, 2.0 * v_i)
}

/// Full stamp of the system at iterate `x` with series admittances scaled
/// by `scale` (1.0 for the true network).
pub(crate) fn assemble(sys: &SplitCircuitSystem, x: &[f64], scale: f64, ws: &mut Workspace) {
    ws.matrix.clear();
    ws.rhs.iter_mut().for_each(|v| *v = 0.0);
    if scale == 1.0 {
        stamp_linear(sys, ws);
    } else {
        stamp_network(sys, scale, ws);
    }
    for b in 0..sys.n_buses() {
        let Some((rr, ri)) = sys.voltage_slots(b) else {
            continue;
        };
        let regulated = sys.group_of_bus[b].is_some_and(|g| sys.q_slot[g].is_some());
        if !regulated {
            let s = sys.fixed_consumption(b);
            stamp_pq(sys, b, x[rr], x[ri], s.re, s.im, ws);
        }
    }
    for g in 0..sys.groups.len() {
        stamp_pv(sys, g, x, ws);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fd<F: Fn(f64) -> f64>(f: F, x: f64) -> f64 {
        let h = 1e-6;
        (f(x + h) - f(x - h)) / (2.0 * h)
    }

    #[test]
    fn zero_power_gives_zero_stamp() {
        let st = injection(1.0, 0.2, 0.0, 0.0);
        assert_eq!(st.current, [0.0, 0.0]);
        assert_eq!(st.dv, [[0.0; 2]; 2]);
    }

    #[test]
    fn unit_voltage_real_load() {
        let st = injection(1.0, 0.0, 0.1, 0.0);
        assert_eq!(st.current, [0.1, 0.0]);
        assert!((st.dv[0][0] + 0.1).abs() < 1e-15);
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let pts = [(1.0, -0.1, 0.3, 0.2), (0.7, 0.4, -0.5, 0.9), (0.95, -0.3, 1.2, -0.4)];
        for &(a, b, p, q) in &pts {
            let st = injection(a, b, p, q);
            for k in 0..2 {
                let da = fd(|t| injection(t, b, p, q).current[k], a);
                let db = fd(|t| injection(a, t, p, q).current[k], b);
                let dp = fd(|t| injection(a, b, t, q).current[k], p);
                let dq = fd(|t| injection(a, b, p, t).current[k], q);
                for (an, num) in [(st.dv[k][0], da), (st.dv[k][1], db), (st.dp[k], dp), (st.dq[k], dq)] {
                    assert!((an - num).abs() <= 1e-6 * an.abs().max(1.0), "{an} vs {num}");
                }
            }
        }
    }

    #[test]
    fn hessian_matches_finite_differences() {
        let (a, b, p, q) = (0.9, -0.25, 0.7, 0.3);
        let hs = injection_hessian(a, b, p, q);
        let grad = |x: [f64; 4], k: usize| -> [f64; 4] {
            let st = injection(x[0], x[1], x[2], x[3]);
            [st.dv[k][0], st.dv[k][1], st.dp[k], st.dq[k]]
        };
        let x0 = [a, b, p, q];
        for k in 0..2 {
            for j in 0..4 {
                let h = 1e-6;
                let mut xp = x0;
                let mut xm = x0;
                xp[j] += h;
                xm[j] -= h;
                let gp = grad(xp, k);
                let gm = grad(xm, k);
                for i in 0..4 {
                    let num = (gp[i] - gm[i]) / (2.0 * h);
                    let an = hs.h[k][i][j];
                    assert!(
                        (an - num).abs() <= 1e-6 * an.abs().max(1.0),
                        "k{k} ({i},{j}) {an} vs {num}"
                    );
                }
            }
        }
    }

    #[test]
    fn magnitude_row_examples() {
        assert_eq!(magnitude_residual(1.0, 0.0, 1.0).0, 0.0);
        let (f, ga, gb) = magnitude_residual(1.02, 0.0, 1.0);
        assert!((f - 0.0404).abs() < 1e-15);
        assert_eq!((ga, gb), (2.04, 0.0));
        let v = (0.97, 0.13);
        let num = fd(|t| magnitude_residual(t, v.1, 1.0).0, v.0);
        assert!((magnitude_residual(v.0, v.1, 1.0).1 - num).abs() < 1e-6);
        let num = fd(|t| magnitude_residual(v.0, t, 1.0).0, v.1);
        assert!((magnitude_residual(v.0, v.1, 1.0).2 - num).abs() < 1e-6);
    }
}
