//! Joint sum-rate and reliability optimization for a multi-user downlink
//! operating at finite block length.
//!
//! The numeric core is generic over [`Real`] (`f32` or `f64`); the aliases
//! below fix it to `f64`, which is what the experiment harness uses.

pub mod channel;
pub mod error;
pub mod error_assignment;
pub mod harness;
pub mod joint;
pub mod kernels;
pub mod power;
pub mod real;

pub use error::{Error, Result};
pub use real::Real;

pub type UserLink = channel::UserLink<f64>;
pub type NetworkRealization = channel::NetworkRealization<f64>;
pub type SortedQosProfile = error_assignment::SortedQosProfile<f64>;
pub type ErrorAssignment = error_assignment::ErrorAssignment<f64>;
pub type PowerConfig = power::PowerConfig<f64>;
pub type PowerSolution = power::PowerSolution<f64>;
pub type SolverConfig = joint::SolverConfig<f64>;
pub type SolveReport = joint::SolveReport<f64>;
pub type Allocation = joint::Allocation<f64>;
