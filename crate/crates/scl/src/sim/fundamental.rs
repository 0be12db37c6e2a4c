//! Fundamental matrix of the linearized dynamics and its inverse.
//!
//! `Φ` solves the homogeneous linearized matrix SDE; the inverse candidate
//! `Ψ` solves its own SDE `dΨ = Ψ(σ_x σ_x − b_x)dt − Ψ σ_x dW`, so no
//! per-step matrix inversion is performed. The product defect `‖ΦΨ − I‖`
//! is monitored per node, both pathwise and for the cross-path mean.

use nalgebra::DMatrix;
use ndarray::Array4;

use crate::error::{Result, SclError};
use crate::problem::{CoefCtx, ControlProblem};
use crate::sim::bundle::PathBundle;

/// Hard gate on the pathwise product defect; crossing it indicates a
/// genuinely ill-conditioned linearization rather than discretization
/// noise.
pub const DEFAULT_DEFECT_TOLERANCE: f64 = 0.5;

pub struct FundamentalMatrixPath {
    /// P×(N+1)×n×n fundamental matrix Φ.
    pub phi: Array4<f64>,
    /// P×(N+1)×n×n inverse candidate Ψ.
    pub psi: Array4<f64>,
    /// max over paths and nodes of ‖Φ(t)Ψ(t) − I‖_F.
    pub defect_sup: f64,
    /// max over nodes of ‖mean over paths of Φ(t)Ψ(t) − I‖_F.
    pub defect_mean: f64,
}

impl FundamentalMatrixPath {
    pub fn phi_mat(&self, path: usize, node: usize) -> DMatrix<f64> {
        let n = self.phi.shape()[2];
        DMatrix::from_fn(n, n, |i, j| self.phi[[path, node, i, j]])
    }

    pub fn psi_mat(&self, path: usize, node: usize) -> DMatrix<f64> {
        let n = self.psi.shape()[2];
        DMatrix::from_fn(n, n, |i, j| self.psi[[path, node, i, j]])
    }
}

pub fn simulate_fundamental(
    p: &ControlProblem,
    bundle: &PathBundle,
) -> Result<FundamentalMatrixPath> {
    simulate_fundamental_checked(p, bundle, DEFAULT_DEFECT_TOLERANCE)
}

pub fn simulate_fundamental_checked(
    p: &ControlProblem,
    bundle: &PathBundle,
    defect_tolerance: f64,
) -> Result<FundamentalMatrixPath> {
    let grid = bundle.grid;
    let (paths, steps, n) = (bundle.path_count(), grid.step_count(), p.state_dim);
    let dt = grid.dt();
    let mut phi = Array4::zeros((paths, steps + 1, n, n));
    let mut psi = Array4::zeros((paths, steps + 1, n, n));
    let eye = DMatrix::<f64>::identity(n, n);
    let mut defect_sup = 0.0f64;
    let mut product_mean = vec![DMatrix::<f64>::zeros(n, n); steps + 1];

    for path in 0..paths {
        let mut phik = eye.clone();
        let mut psik = eye.clone();
        for k in 0..=steps {
            for i in 0..n {
                for j in 0..n {
                    phi[[path, k, i, j]] = phik[(i, j)];
                    psi[[path, k, i, j]] = psik[(i, j)];
                }
            }
            let product = &phik * &psik;
            let defect = (&product - &eye).norm();
            defect_sup = defect_sup.max(defect);
            product_mean[k] += &product;
            if k == steps {
                break;
            }

            let t = grid.node(k);
            let x = bundle.state_vec(path, k);
            let u = bundle.control_vec(path, k);
            let ctx = CoefCtx {
                t,
                x: &x,
                u: &u,
                w_path: bundle.w_prefix(path, k),
            };
            let bx = (p.drift.jac_x)(&ctx);
            let sx = (p.diffusion.jac_x)(&ctx);
            let dwk = bundle.dw[[path, k]];
            let phi_next = &phik + (&bx * &phik) * dt + (&sx * &phik) * dwk;
            let psi_next = &psik + (&psik * (&sx * &sx - &bx)) * dt - (&psik * &sx) * dwk;
            phik = phi_next;
            psik = psi_next;
            if phik.iter().any(|v| !v.is_finite()) || psik.iter().any(|v| !v.is_finite()) {
                return Err(SclError::Integration {
                    path,
                    node: k + 1,
                });
            }
        }
    }

    let mut defect_mean = 0.0f64;
    for p_node in &product_mean {
        let avg = p_node / paths as f64;
        defect_mean = defect_mean.max((&avg - &eye).norm());
    }
    if defect_sup > defect_tolerance {
        return Err(SclError::Conditioning {
            defect: defect_sup,
            tolerance: defect_tolerance,
        });
    }
    Ok(FundamentalMatrixPath {
        phi,
        psi,
        defect_sup,
        defect_mean,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::TimeGrid;
    use crate::problem::{example33, example34, scalar_linear, AdmissibleControl};
    use crate::sim::state::simulate_state;

    fn bundle_for(p: &ControlProblem, steps: usize, paths: usize, seed: u64) -> PathBundle {
        let grid = TimeGrid::new(p.horizon, steps).unwrap();
        let ubar = AdmissibleControl::constant_in(
            &vec![0.0; p.control_dim],
            &p.control_set,
            &grid,
        )
        .unwrap();
        simulate_state(p, &ubar, &grid, paths, seed).unwrap()
    }

    #[test]
    fn zero_linearization_gives_identity() {
        for p in [example33(), example34(1.0)] {
            let bundle = bundle_for(&p, 64, 8, 17);
            let fmp = simulate_fundamental(&p, &bundle).unwrap();
            assert_eq!(fmp.defect_sup, 0.0);
            let n = p.state_dim;
            for path in 0..8 {
                for k in (0..=64).step_by(16) {
                    let phi = fmp.phi_mat(path, k);
                    assert_eq!(phi, DMatrix::identity(n, n));
                }
            }
        }
    }

    #[test]
    fn scalar_constant_coefficients_match_closed_form() {
        // b_x = mu, sigma_x = s: Phi(t) = exp((mu - s^2/2)t + sW(t)) at
        // grid accuracy
        let (mu, s) = (0.8, 0.6);
        let p = scalar_linear(mu, s, 1.0);
        let bundle = bundle_for(&p, 2048, 64, 21);
        let fmp = simulate_fundamental(&p, &bundle).unwrap();
        let mut worst = 0.0f64;
        for path in 0..64 {
            let t = 1.0;
            let w = bundle.w[[path, 2048]];
            let exact = ((mu - 0.5 * s * s) * t + s * w).exp();
            worst = worst.max((fmp.phi[[path, 2048, 0, 0]] - exact).abs() / exact);
        }
        assert!(worst < 0.05, "relative endpoint error {worst}");
    }

    #[test]
    fn deterministic_product_defect_shrinks_linearly_in_steps() {
        // sigma_x = 0: per-step product factor (1 + b_x dt)(1 - b_x dt)
        let p = scalar_linear(1.0, 0.0, 1.0);
        let mut defects = Vec::new();
        for steps in [256usize, 1024, 4096] {
            let bundle = bundle_for(&p, steps, 2, 3);
            let fmp = simulate_fundamental(&p, &bundle).unwrap();
            defects.push(fmp.defect_sup);
        }
        let hs = [1.0 / 256.0, 1.0 / 1024.0, 1.0 / 4096.0];
        let slope = crate::stats::log_log_slope(&hs, &defects);
        assert!((0.8..=1.2).contains(&slope), "defect slope {slope}: {defects:?}");
        assert!(defects[2] < 1e-3);
    }

    #[test]
    fn hard_defect_gate_trips_on_request() {
        let p = scalar_linear(1.0, 1.0, 1.0);
        let bundle = bundle_for(&p, 64, 32, 9);
        let res = simulate_fundamental_checked(&p, &bundle, 1e-9);
        assert!(matches!(res, Err(SclError::Conditioning { .. })));
    }
}
