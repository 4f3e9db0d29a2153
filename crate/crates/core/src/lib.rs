//! Numerical laboratory for multistage sieve density estimation over convex
//! density classes.
//!
//! The lab works with piecewise-constant densities on a uniform grid of
//! `[0, 1]` and builds up from there: divergences and their equivalence
//! constants ([`grid`]), convex class specs with samplers ([`classes`]),
//! packing-based local metric entropy ([`packing`]), the multistage sieve
//! MLE and its adaptive variant ([`sieve`]), and a deterministic Monte Carlo
//! harness for risk, rate and concentration experiments ([`mc`]).
//!
//! Everything randomized draws from counter-derived streams ([`seeding`]),
//! so any report is reproducible from its master seed; replicate maps run on
//! rayon when the `parallel` feature (default) is enabled and fall back to a
//! sequential loop otherwise ([`parallel`]).

pub mod classes;
pub mod config;
pub mod error;
pub mod grid;
pub mod mc;
pub mod packing;
pub mod parallel;
pub mod report;
pub mod seeding;
pub mod sieve;
pub mod verify;

pub use error::{Error, Result};
