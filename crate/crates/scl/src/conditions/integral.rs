//! Integral-type second-order test.
//!
//! For a singular nominal control the quantity
//! `E ∫ ⟨S(t) y₁(t), v(t)⟩ dt` must be nonpositive for every admissible
//! direction `v = u − ū`; a significantly positive estimate certifies
//! non-optimality.

use crate::error::Result;
use crate::hamiltonian::{KernelFrames, SingularityReport};
use crate::sim::{simulate_variational, PerturbationSpec};
use crate::stats;

use super::{combine_verdicts, verdict_for, ConditionCell, ConditionReport, GridEcho};

pub fn integral_type_test(
    frames: &KernelFrames,
    pert: &PerturbationSpec,
    singularity: &SingularityReport,
    gate_k: f64,
    config_echo: serde_json::Value,
) -> Result<ConditionReport> {
    if !singularity.verdict {
        return Ok(ConditionReport::not_applicable(
            "integral-type",
            format!(
                "nominal control is not singular in the classical sense (|H_u| statistic {:.3e}, curvature statistic {:.3e})",
                singularity.sup_hu, singularity.sup_huu_plus
            ),
            config_echo,
        ));
    }
    let p = frames.problem;
    let bundle = frames.bundle;
    pert.validate(p, &bundle.grid)?;
    let grid = bundle.grid;
    let steps = grid.step_count();
    let paths = bundle.path_count();
    let weights = stats::trapezoid_weights(steps + 1, grid.dt());

    // the variational path is noise-driven even when the frames are
    // deterministic, so every simulated path enters the average; on the
    // analytic branch the kernel row is shared
    let s_cache: Option<Vec<nalgebra::DMatrix<f64>>> = (frames.effective_paths() == 1)
        .then(|| (0..=steps).map(|k| frames.frame(0, k).s).collect());

    let vp = simulate_variational(p, bundle, pert)?;
    let mut per_path = Vec::with_capacity(paths);
    for path in 0..paths {
        let mut acc = 0.0;
        for k in 0..=steps {
            let s = match &s_cache {
                Some(cache) => cache[k].clone(),
                None => frames.frame(path, k).s,
            };
            let v = pert.direction_at(&grid, &bundle.control.process, path, k);
            let y1 = nalgebra::DVector::from_iterator(
                p.state_dim,
                vp.y1.slice(ndarray::s![path, k, ..]).iter().copied(),
            );
            acc += weights[k] * (&s * &y1).dot(&v);
        }
        per_path.push(acc);
    }
    let (value, stderr) = stats::mean_stderr(&per_path);

    let cell = ConditionCell {
        tau: 0.0,
        v: Vec::new(),
        value,
        stderr,
        verdict: verdict_for(value, stderr, gate_k),
        share_positive: None,
        dplus_trace: None,
    };
    let cells = vec![cell];
    let global_verdict = combine_verdicts(&cells);
    Ok(ConditionReport {
        condition: "integral-type".to_string(),
        applicable: true,
        note: Some("single whole-horizon cell; v echoes the perturbation direction".to_string()),
        grid: GridEcho {
            tau: vec![0.0],
            v: Vec::new(),
        },
        cells,
        global_verdict,
        config_echo,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adjoint::{solve_adjoints, SolveMethod};
    use crate::grid::TimeGrid;
    use crate::hamiltonian::classical_singularity_check;
    use crate::problem::{example33, example34, AdmissibleControl, ControlProcess};
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
    fn scalar_example_is_violated_with_value_one_half() {
        let p = example33();
        let (bundle, adj) = setup(&p, 128, 4000, 3);
        let frames = KernelFrames::new(&p, &bundle, &adj);
        let report = classical_singularity_check(&frames);
        let pert = PerturbationSpec::convex(ControlProcess::constant(&[1.0]), vec![0.1]);
        let out =
            integral_type_test(&frames, &pert, &report, 3.0, serde_json::json!({})).unwrap();
        assert!(out.applicable);
        let cell = &out.cells[0];
        // E ∫ y₁ dt = ∫ t dt = 1/2
        assert!(
            (cell.value - 0.5).abs() < 4.0 * cell.stderr,
            "value {} ± {}",
            cell.value,
            cell.stderr
        );
        assert_eq!(cell.verdict, super::super::Verdict::Violated);
    }

    #[test]
    fn zero_direction_is_satisfied() {
        let p = example33();
        let (bundle, adj) = setup(&p, 32, 64, 5);
        let frames = KernelFrames::new(&p, &bundle, &adj);
        let report = classical_singularity_check(&frames);
        let pert = PerturbationSpec::convex(ControlProcess::constant(&[0.0]), vec![0.1]);
        let out =
            integral_type_test(&frames, &pert, &report, 3.0, serde_json::json!({})).unwrap();
        assert_eq!(out.cells[0].value, 0.0);
        assert_eq!(out.global_verdict, super::super::Verdict::Satisfied);
    }

    #[test]
    fn planar_example_is_satisfied_with_closed_form_value() {
        let p = example34(1.0);
        let (bundle, adj) = setup(&p, 128, 4000, 7);
        let frames = KernelFrames::new(&p, &bundle, &adj);
        let report = classical_singularity_check(&frames);
        let v = [0.8, -0.5];
        let pert = PerturbationSpec::convex(ControlProcess::constant(&v), vec![0.1]);
        let out =
            integral_type_test(&frames, &pert, &report, 3.0, serde_json::json!({})).unwrap();
        let cell = &out.cells[0];
        // closed form −⟨GBv, Bv⟩T²/2 = −v₁²/2
        let expect = -v[0] * v[0] / 2.0;
        assert!(
            (cell.value - expect).abs() < 4.0 * cell.stderr + 1e-12,
            "value {} vs {expect}",
            cell.value
        );
        assert_eq!(cell.verdict, super::super::Verdict::Satisfied);
    }

    #[test]
    fn quadratic_homogeneity_in_the_direction() {
        let p = example34(1.0);
        let (bundle, adj) = setup(&p, 64, 256, 11);
        let frames = KernelFrames::new(&p, &bundle, &adj);
        let report = classical_singularity_check(&frames);
        let base = [0.4, 0.3];
        let scaled = [0.8, 0.6];
        let out1 = integral_type_test(
            &frames,
            &PerturbationSpec::convex(ControlProcess::constant(&base), vec![0.1]),
            &report,
            3.0,
            serde_json::json!({}),
        )
        .unwrap();
        let out2 = integral_type_test(
            &frames,
            &PerturbationSpec::convex(ControlProcess::constant(&scaled), vec![0.1]),
            &report,
            3.0,
            serde_json::json!({}),
        )
        .unwrap();
        assert!(
            (out2.cells[0].value - 4.0 * out1.cells[0].value).abs() < 1e-12,
            "{} vs 4×{}",
            out2.cells[0].value,
            out1.cells[0].value
        );
    }

    #[test]
    fn non_singular_control_marks_not_applicable() {
        // drop the terminal cost: P2 ≡ 0 and |H_uu| = 1
        use nalgebra::DMatrix;
        let one = DMatrix::from_row_slice(1, 1, &[1.0]);
        let zero = DMatrix::<f64>::zeros(1, 1);
        let set = crate::problem::ControlSet::boxed(vec![-1.0], vec![1.0]).unwrap();
        let p = crate::problem::make_lq_problem(
            zero.clone(),
            one.clone(),
            zero.clone(),
            one.clone(),
            zero.clone(),
            zero.clone(),
            one,
            zero,
            1.0,
            vec![0.0],
            set,
        )
        .unwrap();
        let (bundle, adj) = setup(&p, 32, 32, 13);
        let frames = KernelFrames::new(&p, &bundle, &adj);
        let report = classical_singularity_check(&frames);
        let pert = PerturbationSpec::convex(ControlProcess::constant(&[1.0]), vec![0.1]);
        let out =
            integral_type_test(&frames, &pert, &report, 3.0, serde_json::json!({})).unwrap();
        assert!(!out.applicable);
        assert!(out.note.unwrap().contains("not singular"));
    }
}
