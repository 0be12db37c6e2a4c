//! Second-order cost expansion check under common random numbers.
//!
//! The cost difference `J(ū + εv) − J(ū)` is compared against the
//! adjoint-based prediction
//! `−E∫[ε⟨H_u, v⟩ + (ε²/2)⟨H_uu v, v⟩ + (ε²/2)⟨P₂σ_u v, σ_u v⟩
//!   + ε²⟨S y₁, v⟩]dt`,
//! both sides on the same noise. The scaled residual
//! `|ΔJ − prediction|/ε²` must not grow along the ladder; for exactly
//! quadratic problems it sits at the Monte Carlo noise floor for every ε.

use serde::Serialize;

use crate::error::{Result, SclError};
use crate::hamiltonian::KernelFrames;
use crate::sim::{
    simulate_state_with_noise, simulate_variational, PerturbationMode, PerturbationSpec,
};
use crate::stats;

#[derive(Debug, Clone, Serialize)]
pub struct ExpansionReport {
    pub eps: Vec<f64>,
    pub delta_j: Vec<f64>,
    pub delta_j_stderr: Vec<f64>,
    pub prediction: Vec<f64>,
    pub prediction_stderr: Vec<f64>,
    pub residual_over_eps2: Vec<f64>,
    /// Residual ladder does not grow from the first to the last rung
    /// (up to a rounding slack).
    pub monotone_tail: bool,
}

/// Run the expansion check for a convex perturbation with its ε ladder.
pub fn cost_expansion_check(
    frames: &KernelFrames,
    pert: &PerturbationSpec,
) -> Result<ExpansionReport> {
    let p = frames.problem;
    let bundle = frames.bundle;
    let eps_ladder = match &pert.mode {
        PerturbationMode::Convex { eps_ladder, .. } => eps_ladder.clone(),
        PerturbationMode::Needle { .. } => {
            return Err(SclError::config("cost expansion requires the convex mode"))
        }
    };
    pert.validate(p, &bundle.grid)?;
    let grid = bundle.grid;
    let (paths, steps) = (bundle.path_count(), grid.step_count());
    let weights = stats::trapezoid_weights(steps + 1, grid.dt());

    let vp = simulate_variational(p, bundle, pert)?;

    // per-path first- and second-order prediction integrals, reused for
    // every rung
    let mut lin = vec![0.0; paths];
    let mut quad = vec![0.0; paths];
    for path in 0..paths {
        let mut acc1 = 0.0;
        let mut acc2 = 0.0;
        for k in 0..=steps {
            let f = frames.frame(path, k);
            let v = pert.direction_at(&grid, &bundle.control.process, path, k);
            let y1 = nalgebra::DVector::from_iterator(
                p.state_dim,
                vp.y1.slice(ndarray::s![path, k, ..]).iter().copied(),
            );
            let suv = &f.sigma_u * &v;
            let w = weights[k];
            acc1 += w * f.h_u.dot(&v);
            acc2 += w
                * (0.5 * (&f.h_uu * &v).dot(&v)
                    + 0.5 * f.sigma_u_p2_sigma_u_apply(&suv, frames, path, k)
                    + (&f.s * &y1).dot(&v));
        }
        lin[path] = acc1;
        quad[path] = acc2;
    }

    let base_costs = crate::sim::state_cost_per_path(p, &grid, &bundle.state, &bundle.w, &|pp, k, t| {
        bundle.control.value(pp, k, t)
    });

    let mut report = ExpansionReport {
        eps: eps_ladder.clone(),
        delta_j: Vec::new(),
        delta_j_stderr: Vec::new(),
        prediction: Vec::new(),
        prediction_stderr: Vec::new(),
        residual_over_eps2: Vec::new(),
        monotone_tail: false,
    };

    for &eps in &eps_ladder {
        let state = simulate_state_with_noise(p, bundle, &|pp, k, t| {
            let base = bundle.control.value(pp, k, t);
            let v = pert.direction_at(&grid, &bundle.control.process, pp, k);
            base + eps * v
        })?;
        let pert_costs = crate::sim::state_cost_per_path(p, &grid, &state, &bundle.w, &|pp, k, t| {
            let base = bundle.control.value(pp, k, t);
            let v = pert.direction_at(&grid, &bundle.control.process, pp, k);
            base + eps * v
        });
        let diffs: Vec<f64> = (0..paths)
            .map(|i| pert_costs[i] - base_costs[i])
            .collect();
        let (dj, dj_se) = stats::mean_stderr(&diffs);

        let preds: Vec<f64> = (0..paths)
            .map(|i| -(eps * lin[i] + eps * eps * quad[i]))
            .collect();
        let (pred, pred_se) = stats::mean_stderr(&preds);

        report.delta_j.push(dj);
        report.delta_j_stderr.push(dj_se);
        report.prediction.push(pred);
        report.prediction_stderr.push(pred_se);
        report.residual_over_eps2.push((dj - pred).abs() / (eps * eps));
    }

    let first = report.residual_over_eps2.first().copied().unwrap_or(0.0);
    let last = report.residual_over_eps2.last().copied().unwrap_or(0.0);
    report.monotone_tail = last <= first * (1.0 + 1e-9) + 1e-12;
    Ok(report)
}

impl crate::hamiltonian::KernelFrame {
    /// `⟨P₂ σ_u v, σ_u v⟩` evaluated through the stored second adjoint.
    fn sigma_u_p2_sigma_u_apply(
        &self,
        suv: &nalgebra::DVector<f64>,
        frames: &KernelFrames,
        path: usize,
        node: usize,
    ) -> f64 {
        let (p2, _) = frames
            .adjoint
            .second_at(frames.problem, frames.bundle, path, node);
        (&p2 * suv).dot(suv)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adjoint::{solve_adjoints, SolveMethod};
    use crate::grid::TimeGrid;
    use crate::problem::{example33, AdmissibleControl, ControlProcess};
    use crate::sim::simulate_state;

    #[test]
    fn quadratic_example_matches_minus_half_eps_squared() {
        let p = example33();
        let grid = TimeGrid::new(1.0, 128).unwrap();
        let ubar = AdmissibleControl::constant_in(&[0.0], &p.control_set, &grid).unwrap();
        let bundle = simulate_state(&p, &ubar, &grid, 4000, 21).unwrap();
        let adj = solve_adjoints(&p, &bundle, SolveMethod::Auto).unwrap();
        let frames = KernelFrames::new(&p, &bundle, &adj);
        let pert = PerturbationSpec::convex(
            ControlProcess::constant(&[1.0]),
            vec![0.2, 0.1, 0.05],
        );
        let report = cost_expansion_check(&frames, &pert).unwrap();
        for (i, &eps) in report.eps.iter().enumerate() {
            let expect = -0.5 * eps * eps;
            assert!(
                (report.delta_j[i] - expect).abs() < 4.0 * report.delta_j_stderr[i] + 1e-12,
                "rung {i}: ΔJ {} vs {expect}",
                report.delta_j[i]
            );
            assert!(
                (report.prediction[i] - expect).abs()
                    < 4.0 * report.prediction_stderr[i] + 1e-12,
                "rung {i}: prediction {} vs {expect}",
                report.prediction[i]
            );
            assert!(report.residual_over_eps2[i] < 0.05);
        }
        assert!(report.monotone_tail);
    }

    #[test]
    fn zero_direction_is_exactly_zero() {
        let p = example33();
        let grid = TimeGrid::new(1.0, 32).unwrap();
        let ubar = AdmissibleControl::constant_in(&[0.0], &p.control_set, &grid).unwrap();
        let bundle = simulate_state(&p, &ubar, &grid, 64, 2).unwrap();
        let adj = solve_adjoints(&p, &bundle, SolveMethod::Auto).unwrap();
        let frames = KernelFrames::new(&p, &bundle, &adj);
        let pert = PerturbationSpec::convex(
            ControlProcess::constant(&[0.0]),
            vec![0.2, 0.1, 0.05],
        );
        let report = cost_expansion_check(&frames, &pert).unwrap();
        for i in 0..3 {
            assert_eq!(report.delta_j[i], 0.0);
            assert_eq!(report.prediction[i], 0.0);
        }
    }

    #[test]
    fn full_step_reproduces_the_cost_gap() {
        // û ≡ −1 at ε = 1: J(û) = −1/2 while J(ū) = 0
        let p = example33();
        let grid = TimeGrid::new(1.0, 128).unwrap();
        let ubar = AdmissibleControl::constant_in(&[0.0], &p.control_set, &grid).unwrap();
        let bundle = simulate_state(&p, &ubar, &grid, 20000, 23).unwrap();
        let state = simulate_state_with_noise(&p, &bundle, &|_, _, _| {
            nalgebra::DVector::from_column_slice(&[-1.0])
        })
        .unwrap();
        let costs = crate::sim::state_cost_per_path(&p, &grid, &state, &bundle.w, &|_, _, _| {
            nalgebra::DVector::from_column_slice(&[-1.0])
        });
        let (j, se) = stats::mean_stderr(&costs);
        assert!(
            (j + 0.5).abs() < 3.0 * se,
            "J(û) = {j} ± {se}, expected −0.5"
        );
    }
}
