//! Steady-state grid solver and voltage-setpoint re-dispatch.
//!
//! The network is solved as a pair of coupled real/imaginary circuits in
//! current-injection form. Re-dispatch adds diode limiters on bus voltages
//! and generator reactive output and solves the resulting KKT system by
//! Newton's method, with admittance-stepping continuation as a fallback.

// `!(x > 0.0)` is used on purpose: it rejects NaN along with the bad range.
#![allow(
    clippy::neg_cmp_op_on_partial_ord,
    clippy::needless_range_loop,
    clippy::type_complexity
)]

pub mod contingency;
pub mod error;
pub mod homotopy;
pub mod limiter;
pub mod model;
pub mod opt;
pub mod pf;
pub mod report;
pub mod sparse;

pub use error::{Error, Result};
pub use model::{apply_outage, parse_case, scale_load, CaseFormat, GridCase};
pub use pf::{nr_solve, PowerFlowSolution, SolverOptions};

/// Crate version, echoed in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
