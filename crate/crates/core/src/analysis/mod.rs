//! Cost reports, scaling fits, wall-clock timing and the finite-difference
//! gradient oracle.

mod gradcheck;
pub mod oracles;
mod scaling;
pub mod suites;
mod timing;

pub use crate::cost::{count_macs, measure_macs};
pub use gradcheck::{
    fd_step, gradcheck, numerical_gradient, rel_error, weighted_sum, GradCheckEntry, GradCheckOptions,
    GradCheckReport, ScalarProgram,
};
pub use scaling::{attention_cost, fit_scaling, AttnKind, CostReport, CostRow, ScalingFit};
pub use suites::{run_scope, Scope, SuiteResult};
pub use timing::{time_kernel, TimingStats};
