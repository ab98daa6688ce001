//! Risk-sensitive control of finite Markov decision processes.
//!
//! The long-run cost of a policy is the growth rate
//! `lim (1/N) log E[exp(Σ_{m<N} c(X_m, U_m))]`. Fixed policies are evaluated
//! exactly through Perron roots ([`spectral`]); optimal values come from a
//! single-controller game LP solved by constraint generation ([`game_lp`]),
//! cross-checked against value iteration ([`dp`]) and brute force
//! ([`oracle`]). [`constrained`] adds one risk-sensitive constraint through
//! a Lagrange multiplier, and [`learn`] is a simulation-based two-timescale
//! scheme for the same problem.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![allow(clippy::needless_range_loop)]

pub mod constrained;
pub mod dp;
pub mod error;
pub mod game_lp;
pub mod generate;
pub mod learn;
pub mod linalg;
pub mod lp;
pub mod model;
pub mod oracle;
pub mod par;
pub mod spectral;
pub mod variational;

pub use error::{Error, Result};
pub use model::{CostTag, Mdp, Policy};
pub use par::Execution;
