//! Coalescing stochastic flows on the real line.
//!
//! The crate builds coalescing flows (Arratia, coalescing diffusions, Harris
//! flows) from a finite space-time skeleton of coalescing trajectories,
//! evaluates the flow through the lower-envelope rule, exposes it as a
//! perfect cocycle over the time-shift group and ships a battery of exact and
//! statistical checks for the resulting objects.
//!
//! Module map:
//!
//! - [`motion`]: n-point coalescing motions, scale function, crossing laws.
//! - [`skeleton`]: skeleton construction, snapshots and structural checks.
//! - [`flow`]: flow elements, shift group, cocycle and axiom checks.
//! - [`verify`]: Monte Carlo test battery with negative controls.
//! - [`counterexample`]: the two discrete-time flows with equal marginals.
//! - [`runner`]: configuration, run orchestration and artifact output.

// `!(x > 0.0)` is deliberate throughout: it rejects NaN along with the rest.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod counterexample;
pub mod exec;
pub mod flow;
pub mod motion;
pub mod quadrature;
pub mod rng;
pub mod runner;
pub mod skeleton;
pub mod stats;
pub mod union_find;
pub mod verify;

pub use exec::Execution;
pub use rng::{RngStream, StreamRng};
