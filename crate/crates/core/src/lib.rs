//! Robust stochastic compositional optimization under heavy-tailed noise.
//!
//! Problems have the form `F(w) = f(E[g(w; ξ)]) + r(w)`. The crate provides
//! robust mean estimators, proximal steps, mini-batch and reference-truncated
//! solvers with restart schedules, a distributionally robust regression
//! objective, synthetic quadratic test problems, heavy-tailed noise and a
//! LIBSVM reader.

pub mod data;
pub mod dro;
pub mod error;
pub mod linalg;
pub mod mscg;
pub mod noise;
pub mod problem;
pub mod prox;
pub mod robust_mean;
pub mod rosc;
pub mod synthetic;
pub mod trace;

pub use error::{Error, Result};
pub use problem::{Constants, InnerOracle, OuterFunction, ProblemSpec};
pub use prox::Regularizer;
pub use trace::{RestartRun, RunOptions, RunTrace};
