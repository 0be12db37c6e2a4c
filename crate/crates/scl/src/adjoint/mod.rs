//! First and second adjoint backward equations.
//!
//! Two solution branches share one interface. When the coefficients are
//! deterministic, the nominal control is deterministic, and the nominal
//! trajectory carries no noise (`σ(t, x̄, ū) ≡ 0` along it), both adjoint
//! processes are deterministic and solve backward ODEs; otherwise a
//! backward least-squares sweep estimates conditional expectations across
//! paths. Terminal values are exact by construction in both branches and
//! the second adjoint is symmetrized at every node with the defect
//! recorded.

mod analytic;
mod duality;
mod regression;
mod riccati;

pub use duality::{adjoint_duality_check, duality_residuals, DualityResidual};
pub use riccati::solve_lq_riccati;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Result, SclError};
use crate::problem::{CoefCtx, ControlProblem};
use crate::regress::Fit;
use crate::sim::PathBundle;
use crate::stats;

/// Solver branch selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum SolveMethod {
    Auto,
    Analytic,
    Regression,
}

/// Which branch actually ran.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum BranchUsed {
    Analytic,
    Regression,
}

/// Per-node regression fits: the conditional projection of the next value
/// and the increment projection estimating the martingale integrand.
pub struct NodeFit {
    pub proj: Fit,
    pub q: Fit,
}

pub enum FirstAdjoint {
    /// Deterministic tables per node; the martingale part vanishes.
    Analytic { p1: Vec<DVector<f64>> },
    Regression { degree: usize, nodes: Vec<NodeFit> },
}

pub enum SecondAdjoint {
    Analytic {
        p2: Vec<DMatrix<f64>>,
        sym_defect: f64,
    },
    Regression {
        degree: usize,
        nodes: Vec<NodeFit>,
        sym_defect: f64,
    },
}

/// Sampled adjoint pair with evaluation access per (path, node).
pub struct AdjointSolution {
    pub first: FirstAdjoint,
    pub second: SecondAdjoint,
    pub branch: BranchUsed,
}

/// Default regression basis degree (exact for LQ-type problems).
pub const DEFAULT_BASIS_DEGREE: usize = 2;

/// dt-integrand of the backward first-adjoint step:
/// `b_xᵀP₁ + σ_xᵀQ₁ − f_x`.
pub(crate) fn first_driver(
    p: &ControlProblem,
    ctx: &CoefCtx,
    p1: &DVector<f64>,
    q1: &DVector<f64>,
) -> DVector<f64> {
    let bx = (p.drift.jac_x)(ctx);
    let sx = (p.diffusion.jac_x)(ctx);
    let fx = (p.running_cost.grad_x)(ctx);
    bx.transpose() * p1 + sx.transpose() * q1 - fx
}

/// Hamiltonian state Hessian `H_xx = Σ p1_i ∂²b_i + Σ q1_i ∂²σ_i − f_xx`.
pub(crate) fn hamiltonian_xx(
    p: &ControlProblem,
    ctx: &CoefCtx,
    p1: &DVector<f64>,
    q1: &DVector<f64>,
) -> DMatrix<f64> {
    let n = p.state_dim;
    let bxx = (p.drift.hess_xx)(ctx);
    let sxx = (p.diffusion.hess_xx)(ctx);
    let mut h = -(p.running_cost.hess_xx)(ctx);
    for i in 0..n {
        h += &bxx[i] * p1[i] + &sxx[i] * q1[i];
    }
    h
}

/// dt-integrand of the backward second-adjoint step.
pub(crate) fn second_driver(
    p: &ControlProblem,
    ctx: &CoefCtx,
    p2: &DMatrix<f64>,
    q2: &DMatrix<f64>,
    p1: &DVector<f64>,
    q1: &DVector<f64>,
) -> DMatrix<f64> {
    let bx = (p.drift.jac_x)(ctx);
    let sx = (p.diffusion.jac_x)(ctx);
    let hxx = hamiltonian_xx(p, ctx, p1, q1);
    bx.transpose() * p2 + p2 * &bx + sx.transpose() * p2 * &sx + sx.transpose() * q2 + q2 * &sx
        + hxx
}

pub(crate) fn symmetrize(m: &DMatrix<f64>) -> (DMatrix<f64>, f64) {
    let sym = (m + m.transpose()) * 0.5;
    let defect = (m - m.transpose()).norm();
    (sym, defect)
}

impl AdjointSolution {
    /// `(P₁, Q₁)` on a path at a grid node. `Q₁` at the terminal node is
    /// extrapolated from the last step.
    pub fn first_at(
        &self,
        p: &ControlProblem,
        bundle: &PathBundle,
        path: usize,
        node: usize,
    ) -> (DVector<f64>, DVector<f64>) {
        match &self.first {
            FirstAdjoint::Analytic { p1 } => (p1[node].clone(), DVector::zeros(p.state_dim)),
            FirstAdjoint::Regression { nodes, .. } => {
                regression::first_values(p, bundle, nodes, path, node)
            }
        }
    }

    /// `(P₂, Q₂)` on a path at a grid node, symmetrized.
    pub fn second_at(
        &self,
        p: &ControlProblem,
        bundle: &PathBundle,
        path: usize,
        node: usize,
    ) -> (DMatrix<f64>, DMatrix<f64>) {
        match &self.second {
            SecondAdjoint::Analytic { p2, .. } => {
                (p2[node].clone(), DMatrix::zeros(p.state_dim, p.state_dim))
            }
            SecondAdjoint::Regression { nodes, .. } => {
                regression::second_values(p, bundle, &self.first, nodes, path, node)
            }
        }
    }

    pub fn sym_defect(&self) -> f64 {
        match &self.second {
            SecondAdjoint::Analytic { sym_defect, .. } => *sym_defect,
            SecondAdjoint::Regression { sym_defect, .. } => *sym_defect,
        }
    }

    /// CSV export: one row per node with t and cross-path mean/std of
    /// every component (at most 512 paths sampled for the statistics).
    pub fn to_csv(&self, p: &ControlProblem, bundle: &PathBundle) -> String {
        let n = p.state_dim;
        let steps = bundle.grid.step_count();
        let paths = bundle.path_count();
        let mut header = vec!["t".to_string()];
        for i in 0..n {
            header.push(format!("p1_{i}_mean"));
            header.push(format!("p1_{i}_std"));
        }
        for i in 0..n {
            header.push(format!("q1_{i}_mean"));
            header.push(format!("q1_{i}_std"));
        }
        for i in 0..n {
            for j in 0..n {
                header.push(format!("p2_{i}{j}_mean"));
                header.push(format!("p2_{i}{j}_std"));
            }
        }
        for i in 0..n {
            for j in 0..n {
                header.push(format!("q2_{i}{j}_mean"));
                header.push(format!("q2_{i}{j}_std"));
            }
        }
        let mut out = header.join(",");
        out.push('\n');

        let sample_paths = paths.min(512);
        for k in 0..=steps {
            let mut row = vec![format!("{:.12e}", bundle.grid.node(k))];
            let mut p1s = vec![Vec::with_capacity(sample_paths); n];
            let mut q1s = vec![Vec::with_capacity(sample_paths); n];
            let mut p2s = vec![Vec::with_capacity(sample_paths); n * n];
            let mut q2s = vec![Vec::with_capacity(sample_paths); n * n];
            for path in 0..sample_paths {
                let (p1, q1) = self.first_at(p, bundle, path, k);
                let (p2, q2) = self.second_at(p, bundle, path, k);
                for i in 0..n {
                    p1s[i].push(p1[i]);
                    q1s[i].push(q1[i]);
                }
                for i in 0..n {
                    for j in 0..n {
                        p2s[i * n + j].push(p2[(i, j)]);
                        q2s[i * n + j].push(q2[(i, j)]);
                    }
                }
            }
            for block in [&p1s, &q1s, &p2s, &q2s] {
                for series in block.iter() {
                    let (mean, se) = stats::mean_stderr(series);
                    let std = se * (series.len() as f64).sqrt();
                    row.push(format!("{mean:.12e}"));
                    row.push(format!("{std:.12e}"));
                }
            }
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }
}

/// Solve the first adjoint equation along a nominal bundle.
pub fn solve_first_adjoint(
    p: &ControlProblem,
    bundle: &PathBundle,
    method: SolveMethod,
) -> Result<FirstAdjoint> {
    match method {
        SolveMethod::Analytic => {
            if !analytic::eligible(p, bundle) {
                return Err(SclError::config(
                    "analytic adjoint branch requires deterministic coefficients, a deterministic control, and a noise-free nominal trajectory",
                ));
            }
            analytic::solve_first(p, bundle)
        }
        SolveMethod::Regression => regression::solve_first(p, bundle, DEFAULT_BASIS_DEGREE),
        SolveMethod::Auto => {
            if analytic::eligible(p, bundle) {
                analytic::solve_first(p, bundle)
            } else {
                regression::solve_first(p, bundle, DEFAULT_BASIS_DEGREE)
            }
        }
    }
}

/// Solve the second adjoint equation, consuming the first.
pub fn solve_second_adjoint(
    p: &ControlProblem,
    bundle: &PathBundle,
    first: &FirstAdjoint,
) -> Result<SecondAdjoint> {
    match first {
        FirstAdjoint::Analytic { p1 } => analytic::solve_second(p, bundle, p1),
        FirstAdjoint::Regression { degree, nodes } => {
            regression::solve_second(p, bundle, nodes, *degree)
        }
    }
}

/// Solve both adjoints with branch dispatch.
pub fn solve_adjoints(
    p: &ControlProblem,
    bundle: &PathBundle,
    method: SolveMethod,
) -> Result<AdjointSolution> {
    let first = solve_first_adjoint(p, bundle, method)?;
    let second = solve_second_adjoint(p, bundle, &first)?;
    let branch = match first {
        FirstAdjoint::Analytic { .. } => BranchUsed::Analytic,
        FirstAdjoint::Regression { .. } => BranchUsed::Regression,
    };
    Ok(AdjointSolution {
        first,
        second,
        branch,
    })
}

/// Distance between two adjoint solutions in the mean-square time norm
/// `(E ∫ |·|² dt)^{1/2}`, one entry per component block.
#[derive(Debug, Clone, Serialize)]
pub struct AdjointDistance {
    pub p1: f64,
    pub q1: f64,
    pub p2: f64,
    pub q2: f64,
}

pub fn solution_distance(
    p: &ControlProblem,
    bundle: &PathBundle,
    a: &AdjointSolution,
    b: &AdjointSolution,
) -> AdjointDistance {
    let steps = bundle.grid.step_count();
    let paths = bundle.path_count();
    let dt = bundle.grid.dt();
    let weights = stats::trapezoid_weights(steps + 1, dt);
    let mut acc = [0.0f64; 4];
    for path in 0..paths {
        for k in 0..=steps {
            let (p1a, q1a) = a.first_at(p, bundle, path, k);
            let (p1b, q1b) = b.first_at(p, bundle, path, k);
            let (p2a, q2a) = a.second_at(p, bundle, path, k);
            let (p2b, q2b) = b.second_at(p, bundle, path, k);
            let w = weights[k];
            acc[0] += w * (&p1a - &p1b).norm_squared();
            acc[1] += w * (&q1a - &q1b).norm_squared();
            acc[2] += w * (&p2a - &p2b).norm_squared();
            acc[3] += w * (&q2a - &q2b).norm_squared();
        }
    }
    let scale = 1.0 / paths as f64;
    AdjointDistance {
        p1: (acc[0] * scale).sqrt(),
        q1: (acc[1] * scale).sqrt(),
        p2: (acc[2] * scale).sqrt(),
        q2: (acc[3] * scale).sqrt(),
    }
}
