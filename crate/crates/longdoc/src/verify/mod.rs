//! Self-checking machinery: naive reference implementations, finite-
//! difference gradient checking, and the named equivalence/gradient
//! suites the CLI exposes.

pub mod gradcheck;
pub mod oracle;
mod suites;

pub use suites::{
    run_equivalence_suite, run_gradient_suite, CheckOutcome, KernelOverrides, SuiteReport,
};
