//! Euler–Maruyama state integration.

use nalgebra::DVector;
use ndarray::{Array2, Array3};
use rand::SeedableRng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Result, SclError};
use crate::grid::TimeGrid;
use crate::problem::{AdmissibleControl, CoefCtx, ControlProblem};
use crate::sim::bundle::{cumulative_w, PathBundle};
use crate::stats;

/// Generate Brownian increments: path `i` draws from stream `i` of a
/// counter-based generator seeded with `seed`, so the noise is a pure
/// function of `(seed, path index)`.
pub(crate) fn generate_increments(grid: &TimeGrid, paths: usize, seed: u64) -> Array2<f64> {
    let steps = grid.step_count();
    let scale = grid.dt().sqrt();
    let mut dw = Array2::zeros((paths, steps));
    for p in 0..paths {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(p as u64);
        let mut row = dw.row_mut(p);
        for k in 0..steps {
            let z: f64 = StandardNormal.sample(&mut rng);
            row[k] = scale * z;
        }
    }
    dw
}

/// Integrate the controlled state over supplied increments (common random
/// numbers). The control closure receives `(path, node, t)`.
pub(crate) fn integrate_state(
    p: &ControlProblem,
    grid: &TimeGrid,
    dw: &Array2<f64>,
    w: &Array2<f64>,
    control: &(dyn Fn(usize, usize, f64) -> DVector<f64> + Sync),
) -> Result<Array3<f64>> {
    let paths = dw.shape()[0];
    let steps = grid.step_count();
    let n = p.state_dim;
    let dt = grid.dt();
    let mut state = Array3::zeros((paths, steps + 1, n));
    for path in 0..paths {
        let w_row = w.row(path);
        let w_slice = w_row.to_slice().expect("contiguous w row");
        let mut x = p.initial_state.clone();
        for i in 0..n {
            state[[path, 0, i]] = x[i];
        }
        for k in 0..steps {
            let t = grid.node(k);
            let u = control(path, k, t);
            let ctx = CoefCtx {
                t,
                x: &x,
                u: &u,
                w_path: &w_slice[..=k],
            };
            let b = (p.drift.value)(&ctx);
            let s = (p.diffusion.value)(&ctx);
            let dwk = dw[[path, k]];
            for i in 0..n {
                x[i] += b[i] * dt + s[i] * dwk;
                if !x[i].is_finite() {
                    return Err(SclError::Integration {
                        path,
                        node: k + 1,
                    });
                }
                state[[path, k + 1, i]] = x[i];
            }
        }
    }
    Ok(state)
}

/// Simulate the controlled SDE with fresh increments.
///
/// Identical `(seed, grid, paths)` give bit-identical bundles.
pub fn simulate_state(
    p: &ControlProblem,
    control: &AdmissibleControl,
    grid: &TimeGrid,
    paths: usize,
    seed: u64,
) -> Result<PathBundle> {
    p.check_shape()?;
    let dw = generate_increments(grid, paths, seed);
    let w = cumulative_w(&dw);
    let state = integrate_state(p, grid, &dw, &w, &|path, node, t| {
        control.value(path, node, t)
    })?;
    Ok(PathBundle {
        grid: *grid,
        state_dim: p.state_dim,
        control_dim: p.control_dim,
        seed,
        dw,
        w,
        state,
        control: control.clone(),
    })
}

/// Re-integrate under a different control on an existing bundle's noise.
pub fn simulate_state_with_noise(
    p: &ControlProblem,
    base: &PathBundle,
    control: &(dyn Fn(usize, usize, f64) -> DVector<f64> + Sync),
) -> Result<Array3<f64>> {
    integrate_state(p, &base.grid, &base.dw, &base.w, control)
}

/// Per-path cost of a simulated state array under a control closure:
/// trapezoidal running cost plus terminal cost.
pub fn state_cost_per_path(
    p: &ControlProblem,
    grid: &TimeGrid,
    state: &Array3<f64>,
    w: &Array2<f64>,
    control: &(dyn Fn(usize, usize, f64) -> DVector<f64> + Sync),
) -> Vec<f64> {
    let paths = state.shape()[0];
    let steps = grid.step_count();
    let dt = grid.dt();
    let weights = stats::trapezoid_weights(steps + 1, dt);
    let mut costs = Vec::with_capacity(paths);
    for path in 0..paths {
        let w_row = w.row(path);
        let w_slice = w_row.to_slice().expect("contiguous w row");
        let mut acc = 0.0;
        for k in 0..=steps {
            let t = grid.node(k);
            let x = DVector::from_iterator(
                p.state_dim,
                state.slice(ndarray::s![path, k, ..]).iter().copied(),
            );
            let u = control(path, k, t);
            let ctx = CoefCtx {
                t,
                x: &x,
                u: &u,
                w_path: &w_slice[..=k],
            };
            acc += weights[k] * (p.running_cost.value)(&ctx);
        }
        let xt = DVector::from_iterator(
            p.state_dim,
            state.slice(ndarray::s![path, steps, ..]).iter().copied(),
        );
        acc += (p.terminal_cost.value)(&xt, w_slice);
        costs.push(acc);
    }
    costs
}

/// Monte Carlo cost estimate `(mean, stderr)` of a simulated state array.
pub fn state_cost(
    p: &ControlProblem,
    grid: &TimeGrid,
    state: &Array3<f64>,
    w: &Array2<f64>,
    control: &(dyn Fn(usize, usize, f64) -> DVector<f64> + Sync),
) -> (f64, f64) {
    let costs = state_cost_per_path(p, grid, state, w, control);
    stats::mean_stderr(&costs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{example33, scalar_linear, AdmissibleControl, ControlProcess};

    #[test]
    fn zero_control_keeps_zero_dynamics_exact() {
        let p = example33();
        let grid = TimeGrid::new(1.0, 64).unwrap();
        let ubar = AdmissibleControl::constant_in(&[0.0], &p.control_set, &grid).unwrap();
        let bundle = simulate_state(&p, &ubar, &grid, 32, 7).unwrap();
        assert!(bundle.state.iter().all(|&v| v == 0.0));
        bundle.check_invariants(&p.initial_state).unwrap();
    }

    #[test]
    fn pure_integrator_reproduces_brownian_sums() {
        // b = 0, sigma = 1 via an LQ shell with a custom diffusion value
        let mut p = scalar_linear(0.0, 0.0, 0.0);
        p.diffusion.value =
            std::sync::Arc::new(|_: &CoefCtx| nalgebra::DVector::from_column_slice(&[1.0]));
        p.diffusion.jac_x = std::sync::Arc::new(|_| nalgebra::DMatrix::zeros(1, 1));
        let grid = TimeGrid::new(1.0, 32).unwrap();
        let u = AdmissibleControl::constant_in(&[0.0], &p.control_set, &grid).unwrap();
        let bundle = simulate_state(&p, &u, &grid, 8, 11).unwrap();
        for path in 0..8 {
            for k in 0..=32 {
                let partial: f64 = (0..k).map(|j| bundle.dw[[path, j]]).sum();
                assert!((bundle.state[[path, k, 0]] - partial).abs() < 1e-14);
                assert!((bundle.w[[path, k]] - partial).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn bundles_are_bit_identical_across_runs() {
        let p = scalar_linear(0.5, 0.3, 1.0);
        let grid = TimeGrid::new(1.0, 64).unwrap();
        let u = AdmissibleControl::constant_in(&[0.0], &p.control_set, &grid).unwrap();
        let b1 = simulate_state(&p, &u, &grid, 16, 99).unwrap();
        let b2 = simulate_state(&p, &u, &grid, 16, 99).unwrap();
        assert_eq!(b1.state, b2.state);
        assert_eq!(b1.dw, b2.dw);
    }

    #[test]
    fn geometric_brownian_strong_order_half() {
        // b = x, sigma = x, x0 = 1: exact solution exp(t/2 + W(t))
        let p = scalar_linear(1.0, 1.0, 1.0);
        let u = ControlProcess::constant(&[0.0]);
        let mut errors = Vec::new();
        let steps_ladder = [16usize, 32, 64, 128, 256];
        for &steps in &steps_ladder {
            let grid = TimeGrid::new(1.0, steps).unwrap();
            let adm = AdmissibleControl::new(u.clone(), &p.control_set, &grid).unwrap();
            let bundle = simulate_state(&p, &adm, &grid, 4000, 5).unwrap();
            let mut abs = Vec::with_capacity(4000);
            for path in 0..4000 {
                let wt = bundle.w[[path, steps]];
                let exact = (0.5 + wt).exp();
                abs.push((bundle.state[[path, steps, 0]] - exact).abs());
            }
            errors.push(crate::stats::mean(&abs));
        }
        let hs: Vec<f64> = steps_ladder.iter().map(|&s| 1.0 / s as f64).collect();
        let slope = crate::stats::log_log_slope(&hs, &errors);
        assert!(
            (0.35..=0.7).contains(&slope),
            "strong order estimate {slope} outside [0.35, 0.7]: {errors:?}"
        );
    }

    #[test]
    fn cache_roundtrip_preserves_bundle() {
        let p = scalar_linear(0.2, 0.4, 1.0);
        let grid = TimeGrid::new(1.0, 16).unwrap();
        let u = AdmissibleControl::constant_in(&[0.0], &p.control_set, &grid).unwrap();
        let bundle = simulate_state(&p, &u, &grid, 5, 3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bundle.bin");
        bundle.save_cache(&path).unwrap();
        let loaded = PathBundle::load_cache(&path, bundle.control.clone()).unwrap();
        assert_eq!(bundle.dw, loaded.dw);
        assert_eq!(bundle.state, loaded.state);
        assert_eq!(bundle.w, loaded.w);
        assert_eq!(bundle.seed, loaded.seed);
        assert_eq!(bundle.grid, loaded.grid);
    }

    #[test]
    fn non_finite_state_reports_path_and_node() {
        let mut p = scalar_linear(0.0, 0.0, 1.0);
        p.drift.value = std::sync::Arc::new(|ctx: &CoefCtx| {
            nalgebra::DVector::from_column_slice(&[if ctx.t > 0.5 { f64::NAN } else { 0.0 }])
        });
        let grid = TimeGrid::new(1.0, 8).unwrap();
        let u = AdmissibleControl::constant_in(&[0.0], &p.control_set, &grid).unwrap();
        match simulate_state(&p, &u, &grid, 2, 1) {
            Err(SclError::Integration { path: _, node }) => assert!(node > 4),
            other => panic!("expected integration error, got {:?}", other.map(|_| ())),
        }
    }
}
