//! Window-average diagnostics for Malliavin plug-ins and the
//! limit-kernel identities.

use ndarray::Array3;
use serde::Serialize;

use crate::error::{Result, SclError};
use crate::grid::TimeGrid;
use crate::malliavin::{plugin_path, MalliavinPlugin};
use crate::sim::PathBundle;
use crate::stats;

#[derive(Debug, Clone, Serialize)]
pub struct WindowEstimate {
    pub theta: f64,
    pub value: f64,
    pub stderr: f64,
}

/// Diagonal-consistency check: for each window width θ, the τ-averaged
/// quantity `w(θ) = (1/θ²)∫_τ^{τ+θ}∫_τ^t E|𝔻_s φ(t) − ∇φ(s)|² ds dt`
/// must shrink to zero for conforming plug-ins.
///
/// `tau_grid` lists window starts; each `(τ, θ)` is snapped to grid
/// nodes and both integrals use trapezoid weights.
pub fn window_diagonal_check(
    plugin: &MalliavinPlugin,
    bundle: &PathBundle,
    tau_grid: &[f64],
    theta_ladder: &[f64],
) -> Result<Vec<WindowEstimate>> {
    if tau_grid.is_empty() {
        return Err(SclError::config("window check needs at least one window start"));
    }
    let grid = bundle.grid;
    let paths = bundle.path_count();
    let dt = grid.dt();
    let mut out = Vec::with_capacity(theta_ladder.len());

    for &theta in theta_ladder {
        let windows: Result<Vec<(usize, usize)>> = tau_grid
            .iter()
            .map(|&tau| grid.snap_window(tau, theta))
            .collect();
        let windows = windows?;
        let mut per_path = Vec::with_capacity(paths);
        for path_idx in 0..paths {
            let path = plugin_path(bundle, path_idx);
            let mut tau_acc = 0.0;
            for &(start, steps) in &windows {
                let theta_eff = steps as f64 * dt;
                let grad_cache: Vec<_> = (start..=start + steps)
                    .map(|s_node| plugin.diagonal_at(s_node, &path))
                    .collect();
                let mut outer = 0.0;
                // the inner integral vanishes at t = start, so its node
                // drops out of the outer trapezoid sum
                for t_node in start + 1..=start + steps {
                    let w_t = if t_node == start + steps { 0.5 * dt } else { dt };
                    let mut inner = 0.0;
                    for s_node in start..=t_node {
                        let w_s = if s_node == start || s_node == t_node {
                            0.5 * dt
                        } else {
                            dt
                        };
                        let d = plugin.kernel_at(s_node, t_node, &path);
                        let diff = &d - &grad_cache[s_node - start];
                        inner += w_s * diff.norm_squared();
                    }
                    outer += w_t * inner;
                }
                tau_acc += outer / (theta_eff * theta_eff);
            }
            per_path.push(tau_acc / windows.len() as f64);
        }
        let (value, stderr) = stats::mean_stderr(&per_path);
        out.push(WindowEstimate {
            theta: windows[0].1 as f64 * dt,
            value,
            stderr,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize)]
pub struct LimitKernelEstimate {
    pub theta: f64,
    /// `(1/θ²) E ∫⟨Φ(τ), ∫Ψ ds⟩ dt`.
    pub fixed_start: f64,
    pub fixed_start_stderr: f64,
    /// Same with `Φ(t)` inside the outer integral.
    pub moving: f64,
    pub moving_stderr: f64,
}

/// Window limits of the two double-integral pairings; both converge to
/// `½ E⟨Φ(τ), Ψ(τ)⟩` as θ → 0 for square-integrable processes.
///
/// `phi`/`psi` are sampled processes (paths × nodes × d).
pub fn limit_kernel_check(
    phi: &Array3<f64>,
    psi: &Array3<f64>,
    grid: &TimeGrid,
    tau: f64,
    theta_ladder: &[f64],
) -> Result<Vec<LimitKernelEstimate>> {
    if phi.shape() != psi.shape() {
        return Err(SclError::structural("process sample shapes differ"));
    }
    let paths = phi.shape()[0];
    let dim = phi.shape()[2];
    let dt = grid.dt();
    let mut out = Vec::with_capacity(theta_ladder.len());

    for &theta in theta_ladder {
        let (start, steps) = grid.snap_window(tau, theta)?;
        let theta_eff = steps as f64 * dt;
        let mut fixed = Vec::with_capacity(paths);
        let mut moving = Vec::with_capacity(paths);
        for path in 0..paths {
            let mut acc_fixed = 0.0;
            let mut acc_moving = 0.0;
            // running trapezoid of the inner ∫_τ^t Ψ ds per component
            let mut inner = vec![0.0; dim];
            for t_node in start..=start + steps {
                if t_node > start {
                    for d in 0..dim {
                        inner[d] += 0.5
                            * dt
                            * (psi[[path, t_node - 1, d]] + psi[[path, t_node, d]]);
                    }
                }
                let w_t = if t_node == start || t_node == start + steps {
                    0.5 * dt
                } else {
                    dt
                };
                let mut dot_fixed = 0.0;
                let mut dot_moving = 0.0;
                for d in 0..dim {
                    dot_fixed += phi[[path, start, d]] * inner[d];
                    dot_moving += phi[[path, t_node, d]] * inner[d];
                }
                acc_fixed += w_t * dot_fixed;
                acc_moving += w_t * dot_moving;
            }
            fixed.push(acc_fixed / (theta_eff * theta_eff));
            moving.push(acc_moving / (theta_eff * theta_eff));
        }
        let (fv, fs) = stats::mean_stderr(&fixed);
        let (mv, ms) = stats::mean_stderr(&moving);
        out.push(LimitKernelEstimate {
            theta: theta_eff,
            fixed_start: fv,
            fixed_start_stderr: fs,
            moving: mv,
            moving_stderr: ms,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::malliavin::{brownian_plugin, brownian_squared_plugin};
    use crate::problem::{example33, AdmissibleControl};
    use crate::sim::simulate_state;

    fn bundle(paths: usize, steps: usize, seed: u64) -> PathBundle {
        let p = example33();
        let grid = TimeGrid::new(1.0, steps).unwrap();
        let u = AdmissibleControl::constant_in(&[0.0], &p.control_set, &grid).unwrap();
        simulate_state(&p, &u, &grid, paths, seed).unwrap()
    }

    #[test]
    fn brownian_plugin_has_zero_window_defect() {
        let b = bundle(64, 128, 3);
        let est =
            window_diagonal_check(&brownian_plugin(), &b, &[0.1, 0.3], &[0.2, 0.1]).unwrap();
        for e in &est {
            assert_eq!(e.value, 0.0);
        }
    }

    #[test]
    fn squared_brownian_window_matches_linear_law() {
        // E|2W(t) − 2W(s)|² = 4(t−s) gives w(θ) = (2/3)θ
        let b = bundle(4000, 256, 8);
        let taus = [0.1, 0.25, 0.4];
        let thetas = [0.2, 0.1, 0.05];
        let est =
            window_diagonal_check(&brownian_squared_plugin(), &b, &taus, &thetas).unwrap();
        for e in &est {
            let expect = 2.0 / 3.0 * e.theta;
            assert!(
                (e.value - expect).abs() <= 3.0 * e.stderr + 1e-3,
                "theta {}: {} vs {expect} (se {})",
                e.theta,
                e.value,
                e.stderr
            );
        }
        // ladder decreases toward zero
        assert!(est.last().unwrap().value < est[0].value);
    }

    #[test]
    fn constant_processes_hit_one_half_exactly() {
        let grid = TimeGrid::new(1.0, 128).unwrap();
        let phi = Array3::from_elem((8, 129, 1), 1.0);
        let est = limit_kernel_check(&phi, &phi, &grid, 0.25, &[0.2, 0.1, 0.05]).unwrap();
        for e in &est {
            assert!((e.fixed_start - 0.5).abs() < 1e-12);
            assert!((e.moving - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn polynomial_case_decays_to_zero_at_the_origin() {
        // Φ(t) = t, Ψ ≡ 1, τ = 0: fixed-start ratio is exactly 0 and the
        // moving ratio equals θ/3 up to quadrature error
        let grid = TimeGrid::new(1.0, 512).unwrap();
        let mut phi = Array3::zeros((4, 513, 1));
        for path in 0..4 {
            for k in 0..=512 {
                phi[[path, k, 0]] = grid.node(k);
            }
        }
        let psi = Array3::from_elem((4, 513, 1), 1.0);
        let est = limit_kernel_check(&phi, &psi, &grid, 0.0, &[0.2, 0.1, 0.05]).unwrap();
        for e in &est {
            assert!(e.fixed_start.abs() < 1e-15);
            assert!((e.moving - e.theta / 3.0).abs() < 1e-4, "moving {}", e.moving);
        }
        assert!(est.last().unwrap().moving < est[0].moving);
    }
}
