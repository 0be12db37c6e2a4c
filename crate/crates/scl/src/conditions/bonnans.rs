//! Auxiliary integral quadratic form with explicit first-variation
//! curvature terms:
//! `E∫[⟨H_xx y₁, y₁⟩ + 2⟨H_xu y₁, w⟩ + ⟨H_uu w, w⟩]dt
//!  + E⟨h_xx(x̄(T)) y₁(T), y₁(T)⟩`
//! where `y₁` is driven by the direction `w`. Cone membership of `w` is
//! not decided here; the form is evaluated for whatever direction is
//! supplied.

use crate::error::Result;
use crate::hamiltonian::KernelFrames;
use crate::problem::ControlProcess;
use crate::sim::{simulate_variational, PerturbationSpec};
use crate::stats;

/// Evaluate the quadratic form; returns `(value, stderr)`.
pub fn bonnans_quadratic_form(
    frames: &KernelFrames,
    w_direction: &ControlProcess,
) -> Result<(f64, f64)> {
    let p = frames.problem;
    let bundle = frames.bundle;
    let grid = bundle.grid;
    let (paths, steps, n) = (bundle.path_count(), grid.step_count(), p.state_dim);
    let weights = stats::trapezoid_weights(steps + 1, grid.dt());

    let pert = PerturbationSpec::convex(w_direction.clone(), vec![1.0]);
    let vp = simulate_variational(p, bundle, &pert)?;

    let frames_shared = frames.effective_paths() == 1;
    let mut per_path = Vec::with_capacity(paths);
    for path in 0..paths {
        let mut acc = 0.0;
        for k in 0..=steps {
            let f = frames.frame(if frames_shared { 0 } else { path }, k);
            let w = w_direction.value(path, k, grid.node(k));
            let y1 = nalgebra::DVector::from_iterator(
                n,
                vp.y1.slice(ndarray::s![path, k, ..]).iter().copied(),
            );
            acc += weights[k]
                * ((&f.h_xx * &y1).dot(&y1)
                    + 2.0 * (&f.h_xu * &y1).dot(&w)
                    + (&f.h_uu * &w).dot(&w));
        }
        let xt = bundle.state_vec(path, steps);
        let hxx = (p.terminal_cost.hess)(&xt, bundle.w_prefix(path, steps));
        let y1t = nalgebra::DVector::from_iterator(
            n,
            vp.y1.slice(ndarray::s![path, steps, ..]).iter().copied(),
        );
        acc += (&hxx * &y1t).dot(&y1t);
        per_path.push(acc);
    }
    Ok(stats::mean_stderr(&per_path))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adjoint::{solve_adjoints, SolveMethod};
    use crate::grid::TimeGrid;
    use crate::problem::{example33, example34, AdmissibleControl};
    use crate::sim::simulate_state;

    fn setup(
        p: &crate::problem::ControlProblem,
        steps: usize,
        paths: usize,
        seed: u64,
    ) -> (crate::sim::PathBundle, crate::adjoint::AdjointSolution) {
        let grid = TimeGrid::new(p.horizon, steps).unwrap();
        let ubar =
            AdmissibleControl::constant_in(&vec![0.0; p.control_dim], &p.control_set, &grid)
                .unwrap();
        let bundle = simulate_state(p, &ubar, &grid, paths, seed).unwrap();
        let adj = solve_adjoints(p, &bundle, SolveMethod::Auto).unwrap();
        (bundle, adj)
    }

    #[test]
    fn zero_direction_gives_zero() {
        let p = example33();
        let (bundle, adj) = setup(&p, 32, 32, 3);
        let frames = KernelFrames::new(&p, &bundle, &adj);
        let (value, stderr) =
            bonnans_quadratic_form(&frames, &ControlProcess::constant(&[0.0])).unwrap();
        assert_eq!(value, 0.0);
        assert_eq!(stderr, 0.0);
    }

    #[test]
    fn scalar_example_matches_brownian_moments() {
        // w ≡ 1: H_uu = −1, h_xx = −1, y₁(T) = 1 + W(1):
        // value = −1 − E(1+W)² = −3
        let p = example33();
        let (bundle, adj) = setup(&p, 128, 20000, 5);
        let frames = KernelFrames::new(&p, &bundle, &adj);
        let (value, stderr) =
            bonnans_quadratic_form(&frames, &ControlProcess::constant(&[1.0])).unwrap();
        assert!(
            (value + 3.0).abs() < 3.0 * stderr + 1e-3,
            "value {value} ± {stderr}, expected −3"
        );
    }

    #[test]
    fn planar_example_matches_closed_form() {
        // H blocks vanish; value = ⟨GBw, Bw⟩T² + ⟨GDw, Dw⟩T = w₁²
        let p = example34(1.0);
        let (bundle, adj) = setup(&p, 128, 20000, 7);
        let frames = KernelFrames::new(&p, &bundle, &adj);
        let w = [0.6, -0.8];
        let (value, stderr) =
            bonnans_quadratic_form(&frames, &ControlProcess::constant(&w)).unwrap();
        let expect = w[0] * w[0];
        assert!(
            (value - expect).abs() < 3.0 * stderr + 1e-3,
            "value {value} ± {stderr}, expected {expect}"
        );
    }
}
