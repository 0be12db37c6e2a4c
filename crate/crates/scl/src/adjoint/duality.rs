//! Duality self-checks between the variational and adjoint systems.
//!
//! Integration by parts ties the terminal pairings `⟨h_x, y₁⟩`,
//! `⟨h_x, y₂⟩` and `⟨h_xx y₁, y₁⟩` to time integrals of adjoint/driver
//! pairings. Each identity holds exactly for the continuous system; the
//! Monte Carlo residual on common noise must vanish within statistical
//! error plus an `O(Δt)` discretization allowance.

use nalgebra::DVector;
use serde::Serialize;

use crate::problem::{CoefCtx, ControlProblem};
use crate::sim::{PerturbationSpec, VariationalPaths};
use crate::sim::PathBundle;
use crate::stats;

use super::AdjointSolution;

#[derive(Debug, Clone, Serialize)]
pub struct DualityResidual {
    pub label: String,
    pub lhs: f64,
    pub rhs: f64,
    pub residual: f64,
    /// standard error of the per-path difference under common noise
    pub stderr: f64,
}

fn quad_load(
    blocks_xx: &[nalgebra::DMatrix<f64>],
    blocks_xu: &[nalgebra::DMatrix<f64>],
    blocks_uu: &[nalgebra::DMatrix<f64>],
    y1: &DVector<f64>,
    v: &DVector<f64>,
) -> DVector<f64> {
    let n = blocks_xx.len();
    DVector::from_iterator(
        n,
        (0..n).map(|i| {
            (&blocks_xx[i] * y1).dot(y1)
                + 2.0 * (&blocks_xu[i] * y1).dot(v)
                + (&blocks_uu[i] * v).dot(v)
        }),
    )
}

/// All three duality residuals on common noise.
pub fn duality_residuals(
    p: &ControlProblem,
    bundle: &PathBundle,
    adj: &AdjointSolution,
    vp: &VariationalPaths,
    pert: &PerturbationSpec,
) -> [DualityResidual; 3] {
    let grid = bundle.grid;
    let (paths, steps, n) = (bundle.path_count(), grid.step_count(), p.state_dim);
    let weights = stats::trapezoid_weights(steps + 1, grid.dt());

    let mut diff1 = Vec::with_capacity(paths);
    let mut diff2 = Vec::with_capacity(paths);
    let mut diff3 = Vec::with_capacity(paths);
    let mut lhs1 = Vec::with_capacity(paths);
    let mut lhs2 = Vec::with_capacity(paths);
    let mut lhs3 = Vec::with_capacity(paths);

    for path in 0..paths {
        let mut int1 = 0.0;
        let mut int2 = 0.0;
        let mut int3 = 0.0;
        for k in 0..=steps {
            let t = grid.node(k);
            let x = bundle.state_vec(path, k);
            let u = bundle.control_vec(path, k);
            let ctx = CoefCtx {
                t,
                x: &x,
                u: &u,
                w_path: bundle.w_prefix(path, k),
            };
            let v = pert.direction_at(&grid, &bundle.control.process, path, k);
            let y1 = DVector::from_iterator(
                n,
                vp.y1.slice(ndarray::s![path, k, ..]).iter().copied(),
            );
            let y2 = DVector::from_iterator(
                n,
                vp.y2.slice(ndarray::s![path, k, ..]).iter().copied(),
            );
            let (p1, q1) = adj.first_at(p, bundle, path, k);
            let (p2, q2) = adj.second_at(p, bundle, path, k);
            let bu = (p.drift.jac_u)(&ctx);
            let su = (p.diffusion.jac_u)(&ctx);
            let sx = (p.diffusion.jac_x)(&ctx);
            let fx = (p.running_cost.grad_x)(&ctx);
            let buv = &bu * &v;
            let suv = &su * &v;
            let w = weights[k];

            int1 += w * (p1.dot(&buv) + q1.dot(&suv) + fx.dot(&y1));

            let loadb = quad_load(
                &(p.drift.hess_xx)(&ctx),
                &(p.drift.hess_xu)(&ctx),
                &(p.drift.hess_uu)(&ctx),
                &y1,
                &v,
            );
            let loads = quad_load(
                &(p.diffusion.hess_xx)(&ctx),
                &(p.diffusion.hess_xu)(&ctx),
                &(p.diffusion.hess_uu)(&ctx),
                &y1,
                &v,
            );
            int2 += w * (p1.dot(&loadb) + q1.dot(&loads) + fx.dot(&y2));

            let hxx = super::hamiltonian_xx(p, &ctx, &p1, &q1);
            int3 += w
                * (2.0 * (&p2 * &y1).dot(&buv)
                    + 2.0 * (&p2 * (&sx * &y1)).dot(&suv)
                    + (&p2 * &suv).dot(&suv)
                    + 2.0 * (&q2 * &suv).dot(&y1)
                    - (&hxx * &y1).dot(&y1));
        }

        let xt = bundle.state_vec(path, steps);
        let hx = (p.terminal_cost.grad)(&xt, bundle.w_prefix(path, steps));
        let hxx_t = (p.terminal_cost.hess)(&xt, bundle.w_prefix(path, steps));
        let y1t = DVector::from_iterator(
            n,
            vp.y1.slice(ndarray::s![path, steps, ..]).iter().copied(),
        );
        let y2t = DVector::from_iterator(
            n,
            vp.y2.slice(ndarray::s![path, steps, ..]).iter().copied(),
        );
        let l1 = hx.dot(&y1t);
        let l2 = hx.dot(&y2t);
        let l3 = (&hxx_t * &y1t).dot(&y1t);
        lhs1.push(l1);
        lhs2.push(l2);
        lhs3.push(l3);
        diff1.push(l1 + int1);
        diff2.push(l2 + int2);
        diff3.push(l3 + int3);
    }

    let make = |label: &str, lhs: &[f64], diff: &[f64]| {
        let (ml, _) = stats::mean_stderr(lhs);
        let (md, se) = stats::mean_stderr(diff);
        DualityResidual {
            label: label.to_string(),
            lhs: ml,
            rhs: ml - md,
            residual: md.abs(),
            stderr: se,
        }
    };
    [
        make("terminal_y1", &lhs1, &diff1),
        make("terminal_y2", &lhs2, &diff2),
        make("terminal_quadratic", &lhs3, &diff3),
    ]
}

/// First duality identity only (the `⟨h_x, y₁⟩` pairing).
pub fn adjoint_duality_check(
    p: &ControlProblem,
    bundle: &PathBundle,
    adj: &AdjointSolution,
    vp: &VariationalPaths,
    pert: &PerturbationSpec,
) -> DualityResidual {
    let [first, _, _] = duality_residuals(p, bundle, adj, vp, pert);
    first
}
