//! Variance-reduced decentralized stochastic quasi-Newton optimization:
//! topology and mixing matrices, finite-sum problems, SVRG sampling,
//! bounded Hessian approximations, the iteration engine, baselines and the
//! linear-rate certificate machinery.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod baselines;
pub mod config;
pub mod engine;
pub mod error;
pub mod experiment;
pub mod hessian;
pub mod problems;
pub mod sampling;
pub mod topology;

pub use error::{Error, Result};
