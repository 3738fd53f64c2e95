//! Direct evaluation of the nonlinear KCL mismatch from the case data,
//! without going through any stamp. Used to certify converged solutions.

use num_complex::Complex64;

use crate::model::GridCase;

pub fn max_abs(v: &[f64]) -> f64 {
    v.iter()
        .fold(0.0f64, |m, x| if x.is_nan() { f64::NAN } else { m.max(x.abs()) })
}

/// Current mismatch `Σ_j Y_ij V_j + conj(S_i / V_i)` at every energized
/// non-slack bus, as one complex value per bus (zero elsewhere).
///
/// `group_q` is the reactive output of each generator group in the order
/// of [`GridCase::generator_groups`]; fixed-Q groups use their bound.
pub fn kcl_mismatch(case: &GridCase, v: &[Complex64], group_q: &[f64]) -> Vec<Complex64> {
    let n = case.buses().len();
    let slack = case.slack_index();
    let mut current = vec![Complex64::new(0.0, 0.0); n];
    for br in case.branches().iter().filter(|b| b.status.is_in()) {
        let f = case.bus_index(br.from).unwrap();
        let t = case.bus_index(br.to).unwrap();
        let z = Complex64::new(br.r, br.x);
        let ys = 1.0 / z;
        let half = Complex64::new(0.0, br.b_sh / 2.0);
        // Ideal transformer on the from side: V_f' = V_f / tap.
        let vf = v[f] / br.tap;
        let i_series = ys * (vf - v[t]);
        current[f] += (i_series + half * vf) / br.tap;
        current[t] += -i_series + half * v[t];
    }
    for s in case.shunts().iter().filter(|s| s.status.is_in()) {
        let b = case.bus_index(s.bus).unwrap();
        current[b] += Complex64::new(s.g, s.b) * v[b];
    }
    let mut consumed = vec![Complex64::new(0.0, 0.0); n];
    for l in case.loads().iter().filter(|l| l.status.is_in()) {
        consumed[case.bus_index(l.bus).unwrap()] += Complex64::new(l.p, l.q);
    }
    for (grp, &q) in case.generator_groups().iter().zip(group_q) {
        consumed[grp.bus] -= Complex64::new(grp.p_set, q);
    }
    let energized = match case.topology() {
        Ok(t) => t.energized,
        Err(_) => vec![true; n],
    };
    (0..n)
        .map(|b| {
            if b == slack || !energized[b] {
                Complex64::new(0.0, 0.0)
            } else {
                current[b] + (consumed[b] / v[b]).conj()
            }
        })
        .collect()
}
