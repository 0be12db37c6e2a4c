//! Deterministic second-adjoint reduction for LQ problems.
//!
//! With deterministic LQ data the second adjoint pair is `(P₂(·), 0)`
//! where `P₂` solves the backward matrix ODE
//! `Ṗ₂ = −AᵀP₂ − P₂A − CᵀP₂C + R`, `P₂(T) = −G`.

use nalgebra::DMatrix;

use crate::error::{Result, SclError};
use crate::grid::TimeGrid;
use crate::problem::ControlProblem;

/// Solve the backward Riccati-type ODE with fixed-step fourth-order
/// Runge–Kutta on the given grid; returns `P₂` per node (`Q₂ ≡ 0`).
pub fn solve_lq_riccati(p: &ControlProblem, grid: &TimeGrid) -> Result<Vec<DMatrix<f64>>> {
    let lq = p
        .lq_data
        .as_ref()
        .ok_or_else(|| SclError::config("Riccati reduction requires an LQ-constructed problem"))?;
    let n = p.state_dim;
    let steps = grid.step_count();
    let dt = grid.dt();

    let rhs = |t: f64, p2: &DMatrix<f64>| -> DMatrix<f64> {
        let a = lq.a.at(t);
        let c = lq.c.at(t);
        let r = lq.r.at(t);
        -(a.transpose() * p2) - p2 * &a - c.transpose() * p2 * &c + r
    };

    let mut table = vec![DMatrix::<f64>::zeros(n, n); steps + 1];
    table[steps] = -lq.g.clone();
    let h = -dt; // integrating backward in time
    for k in (0..steps).rev() {
        let t1 = grid.node(k + 1);
        let y = &table[k + 1];
        let k1 = rhs(t1, y);
        let k2 = rhs(t1 + 0.5 * h, &(y + &k1 * (0.5 * h)));
        let k3 = rhs(t1 + 0.5 * h, &(y + &k2 * (0.5 * h)));
        let k4 = rhs(t1 + h, &(y + &k3 * h));
        table[k] = y + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{example34, make_lq_problem, ControlSet};

    #[test]
    fn zero_data_keeps_minus_g() {
        let p = example34(1.0);
        let grid = TimeGrid::new(1.0, 64).unwrap();
        let table = solve_lq_riccati(&p, &grid).unwrap();
        for p2 in &table {
            assert_eq!(p2[(0, 0)], -1.0);
            assert_eq!(p2[(1, 1)], 0.0);
        }
    }

    #[test]
    fn scalar_exponential_oracle() {
        // A = 0, C = 1, R = 0, G = 1: P2' = -P2, P2(t) = -e^{1-t}
        let one = DMatrix::from_row_slice(1, 1, &[1.0]);
        let zero = DMatrix::<f64>::zeros(1, 1);
        let set = ControlSet::boxed(vec![-1.0], vec![1.0]).unwrap();
        let p = make_lq_problem(
            zero.clone(),
            zero.clone(),
            one.clone(),
            zero.clone(),
            zero.clone(),
            zero.clone(),
            zero,
            one,
            1.0,
            vec![0.0],
            set,
        )
        .unwrap();
        let grid = TimeGrid::new(1.0, 512).unwrap();
        let table = solve_lq_riccati(&p, &grid).unwrap();
        let mut worst = 0.0f64;
        for (k, p2) in table.iter().enumerate() {
            let t = grid.node(k);
            let exact = -((1.0 - t).exp());
            worst = worst.max((p2[(0, 0)] - exact).abs());
        }
        assert!(worst < 1e-9, "RK4 error {worst:.3e}");
    }

    #[test]
    fn non_lq_problem_is_rejected() {
        let p = crate::problem::nonlinear_sin();
        let grid = TimeGrid::new(1.0, 16).unwrap();
        assert!(solve_lq_riccati(&p, &grid).is_err());
    }
}
