//! Sequential estimation of bounded, geometric and Poisson means with
//! guaranteed coverage, built on the inclusion principle: sampling stops as
//! soon as a controlling confidence sequence fits inside the target interval
//! around the running sample mean.
//!
//! * [`kernels`]: large-deviation exponents on the extended reals.
//! * [`schedules`]: stage sizes, per-stage confidence budgets and check sets.
//! * [`rules`]: streaming stopping rules A through F.
//! * [`fixed_ci`]: variance-aware fixed-sample interval and region for the mean.
//! * [`seq_mv`]: multistage estimator driven by the fixed-sample interval.
//! * [`sim`]: seeded generators, coverage experiments and brute-force oracles.
//! * [`cli`]: the `seqest` command-line front end.

// Range checks are written `!(x > 0.0)` so that NaN fails them.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod error;
pub mod fixed_ci;
pub mod kernels;
pub mod rules;
pub mod schedules;
pub mod seq_mv;
pub mod sim;

mod bisect;

pub use error::{Error, Result};
pub use fixed_ci::{ci_mean, ConfidenceInterval, SampleSummary};
pub use kernels::ExtReal;
pub use rules::{run_to_stop, Engine, Rule, RunningSample, StopDecision, StopStatus};
pub use schedules::{CheckSet, StageSchedule};
