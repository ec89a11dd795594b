//! Path-integral (MPPI) trajectory optimization together with the
//! sample-complexity machinery that says how many Monte-Carlo rollouts a
//! given control-error tolerance and risk level require.
//!
//! The crate is organised bottom-up:
//!
//! * [`dynamics`]: discrete-time stochastic systems and seeded rollouts.
//! * [`noise`]: counter-based standard-normal streams.
//! * [`moments`]: Gaussian moment propagation and closed-form expected costs.
//! * [`costs`]: running/terminal costs and convex obstacle geometry.
//! * [`mppi`]: the Monte-Carlo control estimator and its empirical statistics.
//! * [`complexity`]: Hoeffding/Chebyshev sample counts and growth bounds.
//! * [`simulator`]: closed-loop receding-horizon harness.
//! * [`config`] and [`experiments`]: the experiment runner behind the CLI.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod complexity;
pub mod config;
pub mod costs;
pub mod dynamics;
pub mod error;
pub mod experiments;
pub mod linalg;
pub mod moments;
pub mod mppi;
pub mod noise;
pub mod report;
pub mod simulator;

pub use error::{Error, Result};
