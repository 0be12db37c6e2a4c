//! First and second variational systems and the perturbation-order check.

use nalgebra::{DMatrix, DVector};
use ndarray::Array3;
use serde::Serialize;

use crate::error::{Result, SclError};
use crate::grid::TimeGrid;
use crate::problem::{CoefCtx, ControlProblem, ControlProcess};
use crate::sim::bundle::PathBundle;
use crate::sim::fundamental::FundamentalMatrixPath;
use crate::sim::state::simulate_state_with_noise;
use crate::stats;

/// Control perturbation: either a convex combination direction with an
/// ε ladder, or a needle replacing the control by `v` on `[τ, τ+θ)`.
#[derive(Clone)]
pub enum PerturbationMode {
    Convex {
        /// Direction `v(·) = u(·) − ū(·)`.
        direction: ControlProcess,
        eps_ladder: Vec<f64>,
    },
    Needle {
        tau: f64,
        theta: f64,
        v: DVector<f64>,
    },
}

#[derive(Clone)]
pub struct PerturbationSpec {
    pub mode: PerturbationMode,
}

impl PerturbationSpec {
    pub fn convex(direction: ControlProcess, eps_ladder: Vec<f64>) -> Self {
        PerturbationSpec {
            mode: PerturbationMode::Convex {
                direction,
                eps_ladder,
            },
        }
    }

    pub fn needle(tau: f64, theta: f64, v: DVector<f64>) -> Self {
        PerturbationSpec {
            mode: PerturbationMode::Needle { tau, theta, v },
        }
    }

    /// Check the spec against a problem and grid: eps ladders must be
    /// strictly decreasing positive, needle windows must snap inside the
    /// horizon with `v ∈ U`.
    pub fn validate(&self, p: &ControlProblem, grid: &TimeGrid) -> Result<()> {
        match &self.mode {
            PerturbationMode::Convex {
                eps_ladder,
                direction,
            } => {
                if direction.dim() != p.control_dim {
                    return Err(SclError::structural(
                        "perturbation direction has wrong control dimension",
                    ));
                }
                for w in eps_ladder.windows(2) {
                    if !(w[1] > 0.0 && w[1] < w[0]) {
                        return Err(SclError::config(
                            "eps ladder must be strictly decreasing and positive",
                        ));
                    }
                }
                if eps_ladder.first().map(|e| *e <= 0.0).unwrap_or(false) {
                    return Err(SclError::config("eps ladder entries must be positive"));
                }
                Ok(())
            }
            PerturbationMode::Needle { tau, theta, v } => {
                grid.snap_window(*tau, *theta)?;
                if !p.control_set.contains(v, 1e-12) {
                    return Err(SclError::domain("needle value v lies outside the control set"));
                }
                Ok(())
            }
        }
    }

    /// Direction value `v(t_k)` on a path, needle windows already snapped
    /// to the grid.
    pub fn direction_at(
        &self,
        grid: &TimeGrid,
        ubar: &ControlProcess,
        path: usize,
        node: usize,
    ) -> DVector<f64> {
        match &self.mode {
            PerturbationMode::Convex { direction, .. } => {
                direction.value(path, node, grid.node(node))
            }
            PerturbationMode::Needle { tau, theta, v } => {
                let (start, steps) = grid
                    .snap_window(*tau, *theta)
                    .expect("validated needle window");
                if node >= start && node < start + steps {
                    v - ubar.value(path, node, grid.node(node))
                } else {
                    DVector::zeros(v.len())
                }
            }
        }
    }
}

/// Sampled first and second variational processes, zero at t = 0.
pub struct VariationalPaths {
    /// P×(N+1)×n.
    pub y1: Array3<f64>,
    /// P×(N+1)×n.
    pub y2: Array3<f64>,
}

/// Quadratic form `yᵀ L y + 2 vᵀ M y + vᵀ N v` per output component.
fn second_order_load(
    blocks_xx: &[DMatrix<f64>],
    blocks_xu: &[DMatrix<f64>],
    blocks_uu: &[DMatrix<f64>],
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

/// Integrate both variational equations along a nominal bundle with
/// coefficients frozen at `(x̄, ū)`; `y2` consumes the freshly computed
/// `y1`.
pub fn simulate_variational(
    p: &ControlProblem,
    bundle: &PathBundle,
    pert: &PerturbationSpec,
) -> Result<VariationalPaths> {
    pert.validate(p, &bundle.grid)?;
    let grid = bundle.grid;
    let (paths, steps, n) = (bundle.path_count(), grid.step_count(), p.state_dim);
    let dt = grid.dt();
    let mut y1 = Array3::zeros((paths, steps + 1, n));
    let mut y2 = Array3::zeros((paths, steps + 1, n));

    for path in 0..paths {
        let mut y1k = DVector::zeros(n);
        let mut y2k = DVector::zeros(n);
        for k in 0..steps {
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
            let dwk = bundle.dw[[path, k]];

            let bx = (p.drift.jac_x)(&ctx);
            let bu = (p.drift.jac_u)(&ctx);
            let sx = (p.diffusion.jac_x)(&ctx);
            let su = (p.diffusion.jac_u)(&ctx);

            let drift1 = &bx * &y1k + &bu * &v;
            let diff1 = &sx * &y1k + &su * &v;

            let bxx = (p.drift.hess_xx)(&ctx);
            let bxu = (p.drift.hess_xu)(&ctx);
            let buu = (p.drift.hess_uu)(&ctx);
            let sxx = (p.diffusion.hess_xx)(&ctx);
            let sxu = (p.diffusion.hess_xu)(&ctx);
            let suu = (p.diffusion.hess_uu)(&ctx);
            let drift2 = &bx * &y2k + second_order_load(&bxx, &bxu, &buu, &y1k, &v);
            let diff2 = &sx * &y2k + second_order_load(&sxx, &sxu, &suu, &y1k, &v);

            y1k += drift1 * dt + diff1 * dwk;
            y2k += drift2 * dt + diff2 * dwk;
            for i in 0..n {
                if !y1k[i].is_finite() || !y2k[i].is_finite() {
                    return Err(SclError::Integration {
                        path,
                        node: k + 1,
                    });
                }
                y1[[path, k + 1, i]] = y1k[i];
                y2[[path, k + 1, i]] = y2k[i];
            }
        }
    }
    Ok(VariationalPaths { y1, y2 })
}

/// First variational process from its closed-form representation through
/// the fundamental matrix pair:
/// `y₁(t) = Φ(t)[∫Φ⁻¹(b_u − σ_x σ_u)v ds + ∫Φ⁻¹ σ_u v dW]`.
///
/// Agrees with the SDE route at discretization accuracy; the stochastic
/// sum uses left endpoints.
pub fn explicit_y1(
    p: &ControlProblem,
    bundle: &PathBundle,
    fmp: &FundamentalMatrixPath,
    pert: &PerturbationSpec,
) -> Result<Array3<f64>> {
    pert.validate(p, &bundle.grid)?;
    let grid = bundle.grid;
    let (paths, steps, n) = (bundle.path_count(), grid.step_count(), p.state_dim);
    let dt = grid.dt();
    let mut y1 = Array3::zeros((paths, steps + 1, n));

    for path in 0..paths {
        let mut lebesgue = DVector::<f64>::zeros(n);
        let mut ito = DVector::<f64>::zeros(n);
        for k in 0..=steps {
            if k > 0 {
                let j = k - 1;
                let t = grid.node(j);
                let x = bundle.state_vec(path, j);
                let u = bundle.control_vec(path, j);
                let ctx = CoefCtx {
                    t,
                    x: &x,
                    u: &u,
                    w_path: bundle.w_prefix(path, j),
                };
                let v = pert.direction_at(&grid, &bundle.control.process, path, j);
                let bu = (p.drift.jac_u)(&ctx);
                let sx = (p.diffusion.jac_x)(&ctx);
                let su = (p.diffusion.jac_u)(&ctx);
                let psi = fmp.psi_mat(path, j);
                lebesgue += &psi * ((&bu - &sx * &su) * &v) * dt;
                ito += &psi * (&su * &v) * bundle.dw[[path, j]];
            }
            let phi = fmp.phi_mat(path, k);
            let val = &phi * (&lebesgue + &ito);
            for i in 0..n {
                y1[[path, k, i]] = val[i];
            }
        }
    }
    Ok(y1)
}

/// Norm ladder report for the perturbation expansion.
#[derive(Debug, Clone, Serialize)]
pub struct SlopeReport {
    pub eps: Vec<f64>,
    /// ‖δx‖∞,2 per rung.
    pub norm_dx: Vec<f64>,
    /// ‖δx − εy₁‖∞,2 per rung.
    pub norm_r1: Vec<f64>,
    /// ‖δx − εy₁ − ε²y₂/2‖∞,2 per rung.
    pub norm_r2: Vec<f64>,
    /// Same norms at κ = 4 (reported, not gated).
    pub norm_dx_k4: Vec<f64>,
    pub norm_r1_k4: Vec<f64>,
    pub norm_r2_k4: Vec<f64>,
    /// Fitted log-log slopes; `None` when a ladder degenerates to zero.
    pub slopes: [Option<f64>; 3],
}

fn sup_norm_kappa(sups: &[f64], kappa: f64) -> f64 {
    let powered: Vec<f64> = sups.iter().map(|s| s.powf(kappa)).collect();
    stats::mean(&powered).powf(1.0 / kappa)
}

fn fit_slope(eps: &[f64], norms: &[f64]) -> Option<f64> {
    // ladders that collapse to rounding dust carry no order information
    if norms.iter().any(|&v| v < 1e-13) {
        return None;
    }
    Some(stats::log_log_slope(eps, norms))
}

/// Measure `‖δx‖`, `‖δx − εy₁‖`, `‖δx − εy₁ − ε²y₂/2‖` over the ε ladder
/// under common random numbers and fit their orders (expected ≈ 1, 2, 3).
pub fn perturbation_order_check(
    p: &ControlProblem,
    bundle: &PathBundle,
    pert: &PerturbationSpec,
) -> Result<SlopeReport> {
    let eps_ladder = match &pert.mode {
        PerturbationMode::Convex { eps_ladder, .. } => eps_ladder.clone(),
        PerturbationMode::Needle { .. } => {
            return Err(SclError::config(
                "perturbation order check requires the convex mode",
            ))
        }
    };
    if eps_ladder.len() < 3 {
        return Err(SclError::config("eps ladder must have at least 3 rungs"));
    }
    pert.validate(p, &bundle.grid)?;

    let vp = simulate_variational(p, bundle, pert)?;
    let grid = bundle.grid;
    let (paths, steps, n) = (bundle.path_count(), grid.step_count(), p.state_dim);

    let mut report = SlopeReport {
        eps: eps_ladder.clone(),
        norm_dx: Vec::new(),
        norm_r1: Vec::new(),
        norm_r2: Vec::new(),
        norm_dx_k4: Vec::new(),
        norm_r1_k4: Vec::new(),
        norm_r2_k4: Vec::new(),
        slopes: [None, None, None],
    };

    for &eps in &eps_ladder {
        let perturbed = simulate_state_with_noise(p, bundle, &|path, node, t| {
            let base = bundle.control.value(path, node, t);
            let v = pert.direction_at(&grid, &bundle.control.process, path, node);
            base + eps * v
        })?;
        let mut sup_dx = vec![0.0f64; paths];
        let mut sup_r1 = vec![0.0f64; paths];
        let mut sup_r2 = vec![0.0f64; paths];
        for path in 0..paths {
            for k in 0..=steps {
                let mut dx2 = 0.0;
                let mut r12 = 0.0;
                let mut r22 = 0.0;
                for i in 0..n {
                    let dx = perturbed[[path, k, i]] - bundle.state[[path, k, i]];
                    let r1 = dx - eps * vp.y1[[path, k, i]];
                    let r2 = r1 - 0.5 * eps * eps * vp.y2[[path, k, i]];
                    dx2 += dx * dx;
                    r12 += r1 * r1;
                    r22 += r2 * r2;
                }
                sup_dx[path] = sup_dx[path].max(dx2.sqrt());
                sup_r1[path] = sup_r1[path].max(r12.sqrt());
                sup_r2[path] = sup_r2[path].max(r22.sqrt());
            }
        }
        report.norm_dx.push(sup_norm_kappa(&sup_dx, 2.0));
        report.norm_r1.push(sup_norm_kappa(&sup_r1, 2.0));
        report.norm_r2.push(sup_norm_kappa(&sup_r2, 2.0));
        report.norm_dx_k4.push(sup_norm_kappa(&sup_dx, 4.0));
        report.norm_r1_k4.push(sup_norm_kappa(&sup_r1, 4.0));
        report.norm_r2_k4.push(sup_norm_kappa(&sup_r2, 4.0));
    }

    report.slopes = [
        fit_slope(&eps_ladder, &report.norm_dx),
        fit_slope(&eps_ladder, &report.norm_r1),
        fit_slope(&eps_ladder, &report.norm_r2),
    ];
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{example33, example34, AdmissibleControl};
    use crate::sim::state::simulate_state;

    fn zero_bundle(p: &ControlProblem, steps: usize, paths: usize, seed: u64) -> PathBundle {
        let grid = TimeGrid::new(p.horizon, steps).unwrap();
        let m = p.control_dim;
        let ubar = AdmissibleControl::constant_in(&vec![0.0; m], &p.control_set, &grid).unwrap();
        simulate_state(p, &ubar, &grid, paths, seed).unwrap()
    }

    #[test]
    fn constant_coefficients_integrate_exactly() {
        // y1(t) = t + W(t) for the scalar singular example with v = 1
        let p = example33();
        let bundle = zero_bundle(&p, 64, 16, 3);
        let pert = PerturbationSpec::convex(ControlProcess::constant(&[1.0]), vec![0.1]);
        let vp = simulate_variational(&p, &bundle, &pert).unwrap();
        for path in 0..16 {
            for k in 0..=64 {
                let expect = bundle.grid.node(k) + bundle.w[[path, k]];
                assert!((vp.y1[[path, k, 0]] - expect).abs() < 1e-12);
                assert_eq!(vp.y2[[path, k, 0]], 0.0);
            }
        }
    }

    #[test]
    fn zero_direction_gives_zero_variations() {
        let p = example33();
        let bundle = zero_bundle(&p, 32, 8, 4);
        let pert = PerturbationSpec::convex(ControlProcess::constant(&[0.0]), vec![0.1]);
        let vp = simulate_variational(&p, &bundle, &pert).unwrap();
        assert!(vp.y1.iter().all(|&v| v == 0.0));
        assert!(vp.y2.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn two_dimensional_closed_form() {
        // y1(t) = B v t + D v W(t) for the 2-d example with constant v
        let p = example34(1.0);
        let bundle = zero_bundle(&p, 64, 12, 5);
        let v = [0.7, -0.3];
        let pert = PerturbationSpec::convex(ControlProcess::constant(&v), vec![0.1]);
        let vp = simulate_variational(&p, &bundle, &pert).unwrap();
        for path in 0..12 {
            for k in 0..=64 {
                let t = bundle.grid.node(k);
                let w = bundle.w[[path, k]];
                let expect0 = v[0] * t; // B v = (v0, 0)
                let expect1 = v[1] * w; // D v = (0, v1)
                assert!((vp.y1[[path, k, 0]] - expect0).abs() < 1e-12);
                assert!((vp.y1[[path, k, 1]] - expect1).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn y1_superposition() {
        let p = crate::problem::nonlinear_sin();
        let bundle = zero_bundle(&p, 32, 10, 6);
        let mk = |v: f64| PerturbationSpec::convex(ControlProcess::constant(&[v]), vec![0.1]);
        let a = simulate_variational(&p, &bundle, &mk(0.3)).unwrap();
        let b = simulate_variational(&p, &bundle, &mk(0.45)).unwrap();
        let ab = simulate_variational(&p, &bundle, &mk(0.75)).unwrap();
        for path in 0..10 {
            for k in 0..=32 {
                let sum = a.y1[[path, k, 0]] + b.y1[[path, k, 0]];
                assert!(
                    (ab.y1[[path, k, 0]] - sum).abs() < 1e-10,
                    "superposition failed at ({path}, {k})"
                );
            }
        }
    }

    #[test]
    fn needle_direction_is_windowed() {
        let p = example33();
        let bundle = zero_bundle(&p, 100, 4, 8);
        let pert = PerturbationSpec::needle(0.25, 0.1, nalgebra::DVector::from_column_slice(&[1.0]));
        pert.validate(&p, &bundle.grid).unwrap();
        let inside = pert.direction_at(&bundle.grid, &bundle.control.process, 0, 27);
        let outside = pert.direction_at(&bundle.grid, &bundle.control.process, 0, 50);
        assert_eq!(inside[0], 1.0);
        assert_eq!(outside[0], 0.0);
    }

    #[test]
    fn needle_outside_control_set_is_rejected() {
        let p = example33();
        let grid = TimeGrid::new(1.0, 64).unwrap();
        let pert = PerturbationSpec::needle(0.2, 0.1, nalgebra::DVector::from_column_slice(&[1.5]));
        assert!(pert.validate(&p, &grid).is_err());
    }

    #[test]
    fn linear_problem_has_exact_first_order_expansion() {
        let p = example33();
        let bundle = zero_bundle(&p, 64, 64, 9);
        let pert = PerturbationSpec::convex(
            ControlProcess::constant(&[1.0]),
            vec![0.2, 0.1, 0.05],
        );
        let report = perturbation_order_check(&p, &bundle, &pert).unwrap();
        for r in &report.norm_r1 {
            assert!(*r < 1e-13, "linear dynamics should cancel exactly: {r}");
        }
        assert!(report.slopes[0].map(|s| (0.9..=1.1).contains(&s)).unwrap_or(false));
        assert!(report.slopes[1].is_none());
    }

    #[test]
    fn short_ladder_is_a_config_error() {
        let p = example33();
        let bundle = zero_bundle(&p, 16, 4, 2);
        let pert = PerturbationSpec::convex(ControlProcess::constant(&[1.0]), vec![0.2, 0.1]);
        assert!(matches!(
            perturbation_order_check(&p, &bundle, &pert),
            Err(SclError::Config(_))
        ));
    }
}
