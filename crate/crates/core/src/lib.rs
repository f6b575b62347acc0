//! Byzantine-robust asynchronous stochastic convex optimisation.
//!
//! The crate combines weighted robust aggregation rules with an asynchronous
//! parameter-server variant of double-momentum SGD, and provides a
//! deterministic simulator for studying the combination on synthetic convex
//! problems.
//!
//! * [`aggregation`]: weighted mean, weighted geometric median, weighted
//!   coordinate-wise median and the centred trimmed meta-aggregator.
//! * [`optimizer`]: server and worker state machines.
//! * [`problems`]: stochastic objectives with replayable samples.
//! * [`attacks`]: Byzantine worker behaviours.
//! * [`scheduler`]: who arrives at each iteration.
//! * [`sim`]: the event loop tying the pieces together.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod aggregation;
pub mod attacks;
pub mod error;
pub mod optimizer;
pub mod problems;
pub mod rng;
pub mod scheduler;
pub mod sim;
pub mod vector;

pub use error::{Error, Result};

/// Library version, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// The guide's chapters, compiled so their snippets run as doctests.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/aggregation.md")]
    mod aggregation {}
    #[doc = include_str!("../../../book/src/optimizer.md")]
    mod optimizer {}
    #[doc = include_str!("../../../book/src/problems.md")]
    mod problems {}
    #[doc = include_str!("../../../book/src/attacks.md")]
    mod attacks {}
    #[doc = include_str!("../../../book/src/scheduling.md")]
    mod scheduling {}
    #[doc = include_str!("../../../book/src/simulation.md")]
    mod simulation {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
