//! Split real/imaginary equivalent circuit and its Newton solver.

mod newton;
mod residual;
pub(crate) mod stamps;
mod system;

pub(crate) use newton::{clip_pair, split_group_q};
pub use newton::{flat_start, limit_step, nr_solve, solve_system, Init, PowerFlowSolution, SolverOptions};
pub use residual::{kcl_mismatch, max_abs};
pub use stamps::{
    injection, injection_hessian, magnitude_residual, stamp_linear, stamp_pq, stamp_pv, InjectionHessian,
    InjectionStamp, EPS_MAG,
};
pub use system::{build_system, BranchStamp, SplitCircuitSystem};

use crate::sparse::StampMatrix;

/// Matrix and right-hand side owned by one solver instance.
#[derive(Debug, Clone)]
pub struct Workspace {
    pub(crate) matrix: StampMatrix,
    pub(crate) rhs: Vec<f64>,
}

impl Workspace {
    /// Workspace frozen to the Jacobian pattern of `sys`.
    pub fn for_system(sys: &SplitCircuitSystem) -> Self {
        Workspace {
            matrix: StampMatrix::with_pattern(sys.n_vars(), sys.pattern()),
            rhs: vec![0.0; sys.n_vars()],
        }
    }

    pub fn matrix(&self) -> &StampMatrix {
        &self.matrix
    }

    pub fn rhs(&self) -> &[f64] {
        &self.rhs
    }

    pub fn clear(&mut self) {
        self.matrix.clear();
        self.rhs.iter_mut().for_each(|v| *v = 0.0);
    }

    /// Device residual `f(x) = J x - rhs` at the iterate the stamps were
    /// linearized at.
    pub fn residual_at(&self, x: &[f64]) -> Vec<f64> {
        let mut f = self.matrix.mul_vec(x);
        for (fi, r) in f.iter_mut().zip(&self.rhs) {
            *fi -= r;
        }
        f
    }
}

/// Stamps the full system at `x` with series admittances scaled by `scale`.
pub fn assemble(sys: &SplitCircuitSystem, x: &[f64], scale: f64, ws: &mut Workspace) {
    stamps::assemble(sys, x, scale, ws)
}

/// Stamps branches with series admittance multiplied by `1 + gamma * beta`.
pub fn homotopy_stamp(sys: &SplitCircuitSystem, gamma: f64, beta: f64, ws: &mut Workspace) {
    stamps::stamp_network(sys, 1.0 + gamma * beta, ws)
}
