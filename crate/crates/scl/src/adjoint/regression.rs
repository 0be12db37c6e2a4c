//! Regression adjoint branch: backward least-squares sweep.
//!
//! At each node the next values are projected onto a polynomial basis of
//! the nominal state (the conditional expectation), the martingale
//! integrand `Q` is estimated by projecting the centered residual times
//! `ΔW/Δt` onto the same basis, and the node value follows from one
//! explicit driver step. Centering the residual removes the `ΔW` noise of
//! the already-explained part, so problems whose adjoints lie in the basis
//! span (LQ-type data) come out exact up to Monte Carlo noise in the
//! coefficients.
//!
//! The sweep stores only the per-node fits; per-(path, node) values are
//! reconstructed on demand through the identical driver formula, keeping
//! memory linear in `N` instead of `P·N`.

use nalgebra::{DMatrix, DVector};

use crate::error::Result;
use crate::problem::{CoefCtx, ControlProblem};
use crate::regress;
use crate::sim::PathBundle;

use super::{hamiltonian_xx, symmetrize, FirstAdjoint, NodeFit, SecondAdjoint};

fn features_at(bundle: &PathBundle, path: usize, node: usize) -> Vec<f64> {
    bundle
        .state
        .slice(ndarray::s![path, node, ..])
        .iter()
        .copied()
        .collect()
}

fn feature_columns(bundle: &PathBundle, node: usize) -> Vec<Vec<f64>> {
    let n = bundle.state_dim;
    let paths = bundle.path_count();
    (0..n)
        .map(|i| (0..paths).map(|p| bundle.state[[p, node, i]]).collect())
        .collect()
}

fn first_driver_mats(
    bx: &DMatrix<f64>,
    sx: &DMatrix<f64>,
    fx: &DVector<f64>,
    p1: &DVector<f64>,
    q1: &DVector<f64>,
) -> DVector<f64> {
    bx.transpose() * p1 + sx.transpose() * q1 - fx
}

fn second_driver_mats(
    bx: &DMatrix<f64>,
    sx: &DMatrix<f64>,
    hxx: &DMatrix<f64>,
    p2: &DMatrix<f64>,
    q2: &DMatrix<f64>,
) -> DMatrix<f64> {
    bx.transpose() * p2 + p2 * bx + sx.transpose() * p2 * sx + sx.transpose() * q2 + q2 * sx + hxx
}

/// Evaluate `(P₁, Q₁)` for one path at one node from the stored fits.
pub(super) fn first_values(
    p: &ControlProblem,
    bundle: &PathBundle,
    nodes: &[NodeFit],
    path: usize,
    node: usize,
) -> (DVector<f64>, DVector<f64>) {
    let n = p.state_dim;
    let steps = bundle.grid.step_count();
    if node == steps {
        let xt = bundle.state_vec(path, steps);
        let p1 = -(p.terminal_cost.grad)(&xt, bundle.w_prefix(path, steps));
        // terminal Q extrapolated from the last interior node
        let q1 = if steps > 0 {
            predict_vec(&nodes[steps - 1].q, &features_at(bundle, path, steps - 1), n)
        } else {
            DVector::zeros(n)
        };
        return (p1, q1);
    }
    let fits = &nodes[node];
    let feats = features_at(bundle, path, node);
    let proj = predict_vec(&fits.proj, &feats, n);
    let q1 = predict_vec(&fits.q, &feats, n);
    let t = bundle.grid.node(node);
    let x = bundle.state_vec(path, node);
    let u = bundle.control_vec(path, node);
    let ctx = CoefCtx {
        t,
        x: &x,
        u: &u,
        w_path: bundle.w_prefix(path, node),
    };
    let bx = (p.drift.jac_x)(&ctx);
    let sx = (p.diffusion.jac_x)(&ctx);
    let fx = (p.running_cost.grad_x)(&ctx);
    let dt = bundle.grid.dt();
    let p1 = &proj + first_driver_mats(&bx, &sx, &fx, &proj, &q1) * dt;
    (p1, q1)
}

/// Evaluate `(P₂, Q₂)` for one path at one node, symmetrized.
pub(super) fn second_values(
    p: &ControlProblem,
    bundle: &PathBundle,
    first: &FirstAdjoint,
    nodes: &[NodeFit],
    path: usize,
    node: usize,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = p.state_dim;
    let steps = bundle.grid.step_count();
    if node == steps {
        let xt = bundle.state_vec(path, steps);
        let (p2, _) = symmetrize(&(-(p.terminal_cost.hess)(&xt, bundle.w_prefix(path, steps))));
        let q2 = if steps > 0 {
            let raw = predict_mat(&nodes[steps - 1].q, &features_at(bundle, path, steps - 1), n);
            symmetrize(&raw).0
        } else {
            DMatrix::zeros(n, n)
        };
        return (p2, q2);
    }
    let fits = &nodes[node];
    let feats = features_at(bundle, path, node);
    let proj = symmetrize(&predict_mat(&fits.proj, &feats, n)).0;
    let q2 = symmetrize(&predict_mat(&fits.q, &feats, n)).0;
    let t = bundle.grid.node(node);
    let x = bundle.state_vec(path, node);
    let u = bundle.control_vec(path, node);
    let ctx = CoefCtx {
        t,
        x: &x,
        u: &u,
        w_path: bundle.w_prefix(path, node),
    };
    let (p1, q1) = match first {
        FirstAdjoint::Analytic { p1 } => (p1[node].clone(), DVector::zeros(n)),
        FirstAdjoint::Regression { nodes, .. } => first_values(p, bundle, nodes, path, node),
    };
    let bx = (p.drift.jac_x)(&ctx);
    let sx = (p.diffusion.jac_x)(&ctx);
    let hxx = hamiltonian_xx(p, &ctx, &p1, &q1);
    let dt = bundle.grid.dt();
    let raw = &proj + second_driver_mats(&bx, &sx, &hxx, &proj, &q2) * dt;
    (symmetrize(&raw).0, q2)
}

fn predict_vec(fit: &regress::Fit, feats: &[f64], n: usize) -> DVector<f64> {
    let mut scratch = vec![0.0; fit.basis.len()];
    let mut out = vec![0.0; n];
    fit.predict_into(feats, &mut scratch, &mut out);
    DVector::from_vec(out)
}

fn predict_mat(fit: &regress::Fit, feats: &[f64], n: usize) -> DMatrix<f64> {
    let mut scratch = vec![0.0; fit.basis.len()];
    let mut out = vec![0.0; n * n];
    fit.predict_into(feats, &mut scratch, &mut out);
    DMatrix::from_fn(n, n, |i, j| out[i * n + j])
}

pub(super) fn solve_first(
    p: &ControlProblem,
    bundle: &PathBundle,
    degree: usize,
) -> Result<FirstAdjoint> {
    let n = p.state_dim;
    let steps = bundle.grid.step_count();
    let paths = bundle.path_count();
    let dt = bundle.grid.dt();

    // rolling per-path values at node k+1, component-major
    let mut next: Vec<Vec<f64>> = vec![vec![0.0; paths]; n];
    for path in 0..paths {
        let xt = bundle.state_vec(path, steps);
        let p1t = -(p.terminal_cost.grad)(&xt, bundle.w_prefix(path, steps));
        for i in 0..n {
            next[i][path] = p1t[i];
        }
    }

    let mut nodes: Vec<Option<NodeFit>> = (0..steps).map(|_| None).collect();
    for k in (0..steps).rev() {
        let feats = feature_columns(bundle, k);
        let proj_fit = regress::fit(&feats, &next, degree)?;

        // centered-residual increment projection for Q
        let mut q_targets: Vec<Vec<f64>> = vec![vec![0.0; paths]; n];
        let mut scratch = vec![0.0; proj_fit.basis.len()];
        let mut proj_out = vec![0.0; n];
        for path in 0..paths {
            let row: Vec<f64> = feats.iter().map(|f| f[path]).collect();
            proj_fit.predict_into(&row, &mut scratch, &mut proj_out);
            let dwk = bundle.dw[[path, k]];
            for i in 0..n {
                q_targets[i][path] = (next[i][path] - proj_out[i]) * dwk / dt;
            }
        }
        let q_fit = regress::fit(&feats, &q_targets, degree)?;

        let node_fit = NodeFit {
            proj: proj_fit,
            q: q_fit,
        };
        // advance the rolling values through the same evaluation path the
        // accessors use
        let mut now: Vec<Vec<f64>> = vec![vec![0.0; paths]; n];
        {
            let tmp_nodes = std::slice::from_ref(&node_fit);
            for path in 0..paths {
                let (p1, _) = first_values_with(p, bundle, tmp_nodes, 0, path, k);
                for i in 0..n {
                    now[i][path] = p1[i];
                }
            }
        }
        next = now;
        nodes[k] = Some(node_fit);
    }

    Ok(FirstAdjoint::Regression {
        degree,
        nodes: nodes.into_iter().map(|n| n.unwrap()).collect(),
    })
}

/// Same as [`first_values`] but with an explicit node-fit slice offset, so
/// the sweep can evaluate a node before the full vector exists.
fn first_values_with(
    p: &ControlProblem,
    bundle: &PathBundle,
    nodes: &[NodeFit],
    fit_index: usize,
    path: usize,
    node: usize,
) -> (DVector<f64>, DVector<f64>) {
    let n = p.state_dim;
    let fits = &nodes[fit_index];
    let feats = features_at(bundle, path, node);
    let proj = predict_vec(&fits.proj, &feats, n);
    let q1 = predict_vec(&fits.q, &feats, n);
    let t = bundle.grid.node(node);
    let x = bundle.state_vec(path, node);
    let u = bundle.control_vec(path, node);
    let ctx = CoefCtx {
        t,
        x: &x,
        u: &u,
        w_path: bundle.w_prefix(path, node),
    };
    let bx = (p.drift.jac_x)(&ctx);
    let sx = (p.diffusion.jac_x)(&ctx);
    let fx = (p.running_cost.grad_x)(&ctx);
    let dt = bundle.grid.dt();
    let p1 = &proj + first_driver_mats(&bx, &sx, &fx, &proj, &q1) * dt;
    (p1, q1)
}

pub(super) fn solve_second(
    p: &ControlProblem,
    bundle: &PathBundle,
    first_nodes: &[NodeFit],
    degree: usize,
) -> Result<SecondAdjoint> {
    let n = p.state_dim;
    let nn = n * n;
    let steps = bundle.grid.step_count();
    let paths = bundle.path_count();
    let dt = bundle.grid.dt();
    let mut sym_defect = 0.0f64;

    let mut next: Vec<Vec<f64>> = vec![vec![0.0; paths]; nn];
    for path in 0..paths {
        let xt = bundle.state_vec(path, steps);
        let raw = -(p.terminal_cost.hess)(&xt, bundle.w_prefix(path, steps));
        let (sym, defect) = symmetrize(&raw);
        sym_defect = sym_defect.max(defect);
        for i in 0..n {
            for j in 0..n {
                next[i * n + j][path] = sym[(i, j)];
            }
        }
    }

    let mut nodes: Vec<Option<NodeFit>> = (0..steps).map(|_| None).collect();
    for k in (0..steps).rev() {
        let feats = feature_columns(bundle, k);
        let proj_fit = regress::fit(&feats, &next, degree)?;

        let mut q_targets: Vec<Vec<f64>> = vec![vec![0.0; paths]; nn];
        let mut scratch = vec![0.0; proj_fit.basis.len()];
        let mut proj_out = vec![0.0; nn];
        for path in 0..paths {
            let row: Vec<f64> = feats.iter().map(|f| f[path]).collect();
            proj_fit.predict_into(&row, &mut scratch, &mut proj_out);
            let dwk = bundle.dw[[path, k]];
            for e in 0..nn {
                q_targets[e][path] = (next[e][path] - proj_out[e]) * dwk / dt;
            }
        }
        let q_fit = regress::fit(&feats, &q_targets, degree)?;
        let node_fit = NodeFit {
            proj: proj_fit,
            q: q_fit,
        };

        let mut now: Vec<Vec<f64>> = vec![vec![0.0; paths]; nn];
        for path in 0..paths {
            let (p2, _, defect) =
                second_values_with(p, bundle, first_nodes, &node_fit, path, k);
            sym_defect = sym_defect.max(defect);
            for i in 0..n {
                for j in 0..n {
                    now[i * n + j][path] = p2[(i, j)];
                }
            }
        }
        next = now;
        nodes[k] = Some(node_fit);
    }

    Ok(SecondAdjoint::Regression {
        degree,
        nodes: nodes.into_iter().map(|n| n.unwrap()).collect(),
        sym_defect,
    })
}

fn second_values_with(
    p: &ControlProblem,
    bundle: &PathBundle,
    first_nodes: &[NodeFit],
    node_fit: &NodeFit,
    path: usize,
    node: usize,
) -> (DMatrix<f64>, DMatrix<f64>, f64) {
    let n = p.state_dim;
    let feats = features_at(bundle, path, node);
    let proj = symmetrize(&predict_mat(&node_fit.proj, &feats, n)).0;
    let q2 = symmetrize(&predict_mat(&node_fit.q, &feats, n)).0;
    let t = bundle.grid.node(node);
    let x = bundle.state_vec(path, node);
    let u = bundle.control_vec(path, node);
    let ctx = CoefCtx {
        t,
        x: &x,
        u: &u,
        w_path: bundle.w_prefix(path, node),
    };
    let (p1, q1) = first_values(p, bundle, first_nodes, path, node);
    let bx = (p.drift.jac_x)(&ctx);
    let sx = (p.diffusion.jac_x)(&ctx);
    let hxx = hamiltonian_xx(p, &ctx, &p1, &q1);
    let dt = bundle.grid.dt();
    let raw = &proj + second_driver_mats(&bx, &sx, &hxx, &proj, &q2) * dt;
    let (sym, defect) = symmetrize(&raw);
    (sym, q2, defect)
}
