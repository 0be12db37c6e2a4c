//! Forward Monte Carlo: Brownian paths, Euler–Maruyama state integration,
//! variational systems, and the fundamental matrix pair.
//!
//! Everything differenced downstream (state perturbations, cost
//! differences) runs on common random numbers: the Brownian increments are
//! generated once per bundle and reused. Per-path streams come from a
//! counter-based generator keyed by `(seed, path index)`, so path `i` sees
//! the same noise regardless of scheduling or path count.

mod bundle;
mod fundamental;
mod state;
mod variational;

pub use bundle::{cumulative_w as bundle_w, PathBundle};
pub use fundamental::{simulate_fundamental, simulate_fundamental_checked, FundamentalMatrixPath};
pub use state::{simulate_state, simulate_state_with_noise, state_cost, state_cost_per_path};
pub use variational::{
    explicit_y1, perturbation_order_check, simulate_variational, PerturbationMode,
    PerturbationSpec, SlopeReport, VariationalPaths,
};
