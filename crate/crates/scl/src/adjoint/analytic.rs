//! Deterministic adjoint branch: backward Heun integration of the node
//! tables along the (noise-free) nominal trajectory.

use nalgebra::{DMatrix, DVector};

use crate::error::Result;
use crate::problem::{CoefCtx, ControlProblem};
use crate::sim::PathBundle;

use super::{first_driver, second_driver, symmetrize, FirstAdjoint, SecondAdjoint};

const NOISE_FREE_TOL: f64 = 1e-12;

/// The analytic branch applies when the coefficients carry no path
/// dependence, the nominal control is deterministic, and the diffusion
/// vanishes along the nominal trajectory, which makes all frozen
/// coefficients and the terminal data deterministic.
pub fn eligible(p: &ControlProblem, bundle: &PathBundle) -> bool {
    if p.coefficient_class != crate::problem::CoefficientClass::Deterministic {
        return false;
    }
    if !bundle.control.is_deterministic() {
        return false;
    }
    let steps = bundle.grid.step_count();
    for k in 0..=steps {
        let t = bundle.grid.node(k);
        let x = bundle.state_vec(0, k);
        let u = bundle.control_vec(0, k);
        let ctx = CoefCtx::probe(t, &x, &u);
        if (p.diffusion.value)(&ctx).amax() > NOISE_FREE_TOL {
            return false;
        }
    }
    true
}

pub fn solve_first(p: &ControlProblem, bundle: &PathBundle) -> Result<FirstAdjoint> {
    let grid = bundle.grid;
    let steps = grid.step_count();
    let dt = grid.dt();
    let mut table: Vec<DVector<f64>> = vec![DVector::zeros(p.state_dim); steps + 1];
    let xt = bundle.state_vec(0, steps);
    table[steps] = -(p.terminal_cost.grad)(&xt, &[]);
    let zero_q = DVector::zeros(p.state_dim);

    let eval = |k: usize, value: &DVector<f64>| -> DVector<f64> {
        let t = grid.node(k);
        let x = bundle.state_vec(0, k);
        let u = bundle.control_vec(0, k);
        let ctx = CoefCtx::probe(t, &x, &u);
        first_driver(p, &ctx, value, &zero_q)
    };

    // backward Heun: exact for constant integrands, O(dt²) otherwise
    for k in (0..steps).rev() {
        let g_next = eval(k + 1, &table[k + 1]);
        let predictor = &table[k + 1] + &g_next * dt;
        let g_here = eval(k, &predictor);
        table[k] = &table[k + 1] + (g_next + g_here) * (0.5 * dt);
    }
    Ok(FirstAdjoint::Analytic { p1: table })
}

pub fn solve_second(
    p: &ControlProblem,
    bundle: &PathBundle,
    p1_table: &[DVector<f64>],
) -> Result<SecondAdjoint> {
    let grid = bundle.grid;
    let steps = grid.step_count();
    let n = p.state_dim;
    let dt = grid.dt();
    let mut table: Vec<DMatrix<f64>> = vec![DMatrix::zeros(n, n); steps + 1];
    let xt = bundle.state_vec(0, steps);
    let mut sym_defect = 0.0f64;
    let (terminal, defect) = symmetrize(&(-(p.terminal_cost.hess)(&xt, &[])));
    sym_defect = sym_defect.max(defect);
    table[steps] = terminal;
    let zero_q1 = DVector::zeros(n);
    let zero_q2 = DMatrix::zeros(n, n);

    let eval = |k: usize, value: &DMatrix<f64>| -> DMatrix<f64> {
        let t = grid.node(k);
        let x = bundle.state_vec(0, k);
        let u = bundle.control_vec(0, k);
        let ctx = CoefCtx::probe(t, &x, &u);
        second_driver(p, &ctx, value, &zero_q2, &p1_table[k], &zero_q1)
    };

    for k in (0..steps).rev() {
        let g_next = eval(k + 1, &table[k + 1]);
        let predictor = &table[k + 1] + &g_next * dt;
        let g_here = eval(k, &predictor);
        let raw = &table[k + 1] + (g_next + g_here) * (0.5 * dt);
        let (sym, defect) = symmetrize(&raw);
        sym_defect = sym_defect.max(defect);
        table[k] = sym;
    }
    Ok(SecondAdjoint::Analytic {
        p2: table,
        sym_defect,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adjoint::{solve_adjoints, BranchUsed, SolveMethod};
    use crate::grid::TimeGrid;
    use crate::problem::{example33, example34, scalar_linear, AdmissibleControl};
    use crate::sim::simulate_state;

    fn zero_bundle(p: &ControlProblem, steps: usize, paths: usize) -> PathBundle {
        let grid = TimeGrid::new(p.horizon, steps).unwrap();
        let ubar =
            AdmissibleControl::constant_in(&vec![0.0; p.control_dim], &p.control_set, &grid)
                .unwrap();
        simulate_state(p, &ubar, &grid, paths, 1).unwrap()
    }

    #[test]
    fn scalar_example_is_exactly_zero_and_one() {
        let p = example33();
        let bundle = zero_bundle(&p, 128, 4);
        let adj = solve_adjoints(&p, &bundle, SolveMethod::Auto).unwrap();
        assert_eq!(adj.branch, BranchUsed::Analytic);
        for k in 0..=128 {
            let (p1, q1) = adj.first_at(&p, &bundle, 0, k);
            let (p2, q2) = adj.second_at(&p, &bundle, 0, k);
            assert_eq!(p1[0], 0.0);
            assert_eq!(q1[0], 0.0);
            assert_eq!(p2[(0, 0)], 1.0);
            assert_eq!(q2[(0, 0)], 0.0);
        }
        assert_eq!(adj.sym_defect(), 0.0);
    }

    #[test]
    fn two_dimensional_example_returns_minus_g() {
        let p = example34(1.0);
        let bundle = zero_bundle(&p, 64, 4);
        let adj = solve_adjoints(&p, &bundle, SolveMethod::Auto).unwrap();
        assert_eq!(adj.branch, BranchUsed::Analytic);
        for k in (0..=64).step_by(16) {
            let (p2, _) = adj.second_at(&p, &bundle, 0, k);
            assert_eq!(p2[(0, 0)], -1.0);
            assert_eq!(p2[(0, 1)], 0.0);
            assert_eq!(p2[(1, 1)], 0.0);
        }
    }

    #[test]
    fn zero_costs_give_zero_adjoints_for_any_dynamics() {
        let p = scalar_linear(0.7, 0.0, 1.0);
        // scalar_linear has G = 0 and R = M = N = 0, so h_x = f_x = 0
        let bundle = zero_bundle(&p, 64, 4);
        let adj = solve_adjoints(&p, &bundle, SolveMethod::Auto).unwrap();
        assert_eq!(adj.branch, BranchUsed::Analytic);
        for k in (0..=64).step_by(8) {
            let (p1, q1) = adj.first_at(&p, &bundle, 0, k);
            assert_eq!(p1[0], 0.0);
            assert_eq!(q1[0], 0.0);
        }
    }

    #[test]
    fn noisy_nominal_trajectory_is_ineligible() {
        // sigma = x with x0 = 1 puts noise on the nominal path
        let p = scalar_linear(0.0, 1.0, 1.0);
        let bundle = zero_bundle(&p, 32, 4);
        assert!(!eligible(&p, &bundle));
        assert!(matches!(
            crate::adjoint::solve_first_adjoint(&p, &bundle, SolveMethod::Analytic),
            Err(crate::error::SclError::Config(_))
        ));
    }
}
