//! Difference-of-convex (DC) solvers built around Bregman geometry.
//!
//! The library minimizes composite objectives of the form
//!
//! ```text
//!     F(x) = f(x) + g(x) - h(x)
//! ```
//!
//! where `f` is smooth relative to a convex kernel `phi` (meaning `L*phi - f`
//! and `l*phi + f` are convex), `g` is proper closed convex (possibly
//! extended-real), and `h` is a convex minorant peeled off a concave penalty.
//! Three iteration schemes share one driver:
//!
//! * plain DC iterations ([`Variant::Dca`]),
//! * inertial DC iterations with a fixed momentum weight ([`Variant::Idca`]),
//! * extrapolated DC iterations where the momentum is admitted only when a
//!   Bregman-distance test certifies it ([`Variant::Dcae`]).
//!
//! [`matcomp`] instantiates the framework for nonnegative matrix factorization
//! against sparse observations with an exponential concave penalty, [`data`]
//! holds the sparse-ratings plumbing, and [`diagnostics`] checks solver traces
//! against the inequalities the iterations are supposed to satisfy.

// Validation code negates comparisons on purpose: `!(x > 0.0)` rejects NaN
// where `x <= 0.0` would wave it through.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bregman;
pub mod data;
pub mod diagnostics;
pub mod matcomp;
pub mod solver;

pub use bregman::{bregman_distance, BregmanKernel, DcProblem, QuadraticKernel, SubproblemOracle};
pub use solver::{run_solver, SolverConfig, SolverRun, Variant};
