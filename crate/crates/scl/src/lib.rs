//! Desk-scale verification toolkit for stochastic optimal control.
//!
//! The crate simulates controlled scalar-noise SDEs together with their
//! first/second variational systems and fundamental matrix, solves the two
//! adjoint backward equations (exactly when the data is deterministic,
//! by backward least-squares regression otherwise), detects singular
//! controls in the classical sense, and evaluates integral-type and
//! pointwise second-order optimality tests on (time, control) grids with
//! Monte Carlo error bars.
//!
//! The main entry points, in pipeline order:
//!
//! 1. [`problem`] — define a [`problem::ControlProblem`] (built-in presets,
//!    an LQ constructor, expression strings, or closures) and run
//!    [`problem::validate_problem`].
//! 2. [`sim`] — Brownian paths and Euler–Maruyama state /
//!    variational / fundamental-matrix integration under common random
//!    numbers.
//! 3. [`adjoint`] — first and second adjoint processes, the LQ Riccati
//!    reduction, and duality self-checks.
//! 4. [`hamiltonian`] — Hamiltonian derivative frames, the mixed
//!    second-order kernel, and the classical singularity test.
//! 5. [`malliavin`] — user-supplied Malliavin derivative plug-ins,
//!    Clark–Ocone and martingale-representation machinery, window
//!    diagnostics, and the exact counterexample integrands.
//! 6. [`conditions`] — cost expansion, integral-type, pointwise
//!    martingale-form and Malliavin-form second-order tests.
//! 7. [`pipeline`] / [`runconfig`] — one-shot orchestration used by the
//!    `scl` binary (`validate | simulate | adjoint | check | reproduce`).
//!
//! Every estimator is deterministic given a seed: per-path RNG streams are
//! derived from `(seed, path index)` with a counter-based generator and all
//! cross-path reductions run in a fixed order.

pub mod adjoint;
pub mod conditions;
pub mod error;
pub mod expr;
pub mod grid;
pub mod hamiltonian;
pub mod malliavin;
pub mod pipeline;
pub mod problem;
pub mod regress;
pub mod runconfig;
pub mod sim;
pub mod stats;

pub use error::{Result, SclError};
