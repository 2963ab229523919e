//! Differentially-private distributed optimization.
//!
//! Two algorithm families are implemented over a simulated network of
//! agents: gradient descent with a decaying static-consensus coupling
//! (undirected graphs) and push-pull gradient tracking (directed graphs).
//! Both obscure every transmitted value with Laplace noise. Around the
//! solvers sit validators for the stepsize and coupling conditions, a
//! privacy accountant that evaluates the cumulative ε budget, and a Monte
//! Carlo harness.

pub mod error;
pub mod graph;
pub mod harness;
pub mod noise;
pub mod objectives;
pub mod privacy;
pub mod report;
pub mod schedules;
pub mod solvers;

pub use error::{Error, Result};
pub use report::{ConditionEntry, ConditionReport};
