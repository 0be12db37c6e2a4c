//! First- and second-order optimality tests with statistical verdicts.
//!
//! Every test reports per-cell values with Monte Carlo standard errors
//! and a three-state verdict: a cell is `Violated` only when its value
//! exceeds `k` standard errors (default `k = 3`), `Inconclusive` when
//! positive but within noise, and `Satisfied` otherwise. Verdicts are
//! data, not failures.

mod bonnans;
mod expansion;
mod integral;
mod pointwise;

pub use bonnans::bonnans_quadratic_form;
pub use expansion::{cost_expansion_check, ExpansionReport};
pub use integral::integral_type_test;
pub use pointwise::{
    dplus_estimate, needle_cross_term_scaling, needle_first_order_test,
    pointwise_malliavin_test, pointwise_martingale_test, CrossTermPoint, DplusTrace,
};

use nalgebra::DVector;
use serde::Serialize;

use crate::grid::TimeGrid;
use crate::problem::ControlProcess;

/// Default statistical gate: violations need `value > 3·stderr`.
pub const DEFAULT_GATE_K: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Satisfied,
    Violated,
    Inconclusive,
}

/// Verdict rule shared by all condition tests.
pub fn verdict_for(value: f64, stderr: f64, gate_k: f64) -> Verdict {
    if value > gate_k * stderr {
        Verdict::Violated
    } else if value > 0.0 {
        Verdict::Inconclusive
    } else {
        Verdict::Satisfied
    }
}

/// Combine cell verdicts: any violation dominates, then inconclusive.
pub fn combine_verdicts(cells: &[ConditionCell]) -> Verdict {
    if cells.iter().any(|c| c.verdict == Verdict::Violated) {
        Verdict::Violated
    } else if cells.iter().any(|c| c.verdict == Verdict::Inconclusive) {
        Verdict::Inconclusive
    } else {
        Verdict::Satisfied
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ConditionCell {
    pub tau: f64,
    pub v: Vec<f64>,
    pub value: f64,
    pub stderr: f64,
    pub verdict: Verdict,
    /// Fraction of sampled paths with a positive pathwise value, when the
    /// test is pathwise.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub share_positive: Option<f64>,
    /// Window-ratio ladder behind a `∂⁺` estimate.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dplus_trace: Option<DplusTrace>,
}

#[derive(Debug, Clone, Serialize)]
pub struct GridEcho {
    pub tau: Vec<f64>,
    pub v: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConditionReport {
    pub condition: String,
    /// False when a precondition (singularity) failed; the note explains.
    pub applicable: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
    pub grid: GridEcho,
    pub cells: Vec<ConditionCell>,
    pub global_verdict: Verdict,
    pub config_echo: serde_json::Value,
}

impl ConditionReport {
    pub fn not_applicable(condition: &str, note: String, config_echo: serde_json::Value) -> Self {
        ConditionReport {
            condition: condition.to_string(),
            applicable: false,
            note: Some(note),
            grid: GridEcho {
                tau: Vec::new(),
                v: Vec::new(),
            },
            cells: Vec::new(),
            global_verdict: Verdict::Inconclusive,
            config_echo,
        }
    }
}

/// Window starts: evenly spaced grid nodes leaving a terminal margin of
/// the widest window.
pub fn default_tau_grid(grid: &TimeGrid, theta_max: f64, count: usize) -> Vec<f64> {
    let latest = (grid.horizon() - theta_max).max(0.0);
    let count = count.max(1);
    (0..count)
        .map(|i| {
            let raw = latest * i as f64 / count.max(2).saturating_sub(1) as f64;
            grid.node(grid.nearest_node(raw))
        })
        .collect()
}

/// Certificate grid of probe controls: the control set's sample grid plus
/// the nominal control value at `τ` when it is deterministic.
pub fn probe_controls(
    set_grid: &[DVector<f64>],
    ubar: &ControlProcess,
    tau_node: usize,
    tau: f64,
) -> Vec<DVector<f64>> {
    let mut out: Vec<DVector<f64>> = set_grid.to_vec();
    if ubar.is_deterministic() {
        let u = ubar.value(0, tau_node, tau);
        if !out.iter().any(|g| (g - &u).norm() < 1e-14) {
            out.push(u);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn verdict_rule_matches_contract() {
        assert_eq!(verdict_for(1.0, 0.1, 3.0), Verdict::Violated);
        assert_eq!(verdict_for(0.2, 0.1, 3.0), Verdict::Inconclusive);
        assert_eq!(verdict_for(0.0, 0.1, 3.0), Verdict::Satisfied);
        assert_eq!(verdict_for(-0.5, 0.1, 3.0), Verdict::Satisfied);
        // deterministic values have zero stderr: any positive value is a
        // violation
        assert_eq!(verdict_for(1e-9, 0.0, 3.0), Verdict::Violated);
    }

    #[test]
    fn tau_grid_leaves_margin() {
        let grid = TimeGrid::new(1.0, 100).unwrap();
        let taus = default_tau_grid(&grid, 0.25, 5);
        assert_eq!(taus.len(), 5);
        assert!(taus.iter().all(|&t| t <= 0.75 + 1e-12));
        assert_eq!(taus[0], 0.0);
    }
}
