//! Pointwise second-order tests on a (window start, probe control) grid.
//!
//! The martingale form pairs the instantaneous curvature term with a
//! window-limit functional estimated over a shrinking θ ladder; the
//! superior limit is approximated by the maximum over the ladder tail and
//! the full trace is attached to each cell so the approximation is
//! auditable. The Malliavin form replaces the window limit with the
//! diagonal-derivative plug-ins required by the regularity assumption
//! (C3).

use nalgebra::DVector;
use ndarray::Array3;
use serde::Serialize;

use crate::error::{Result, SclError};
use crate::hamiltonian::{KernelFrames, SingularityReport};
use crate::malliavin::{
    martingale_representation, plugin_path, KernelSource, MalliavinPlugin,
};
use crate::sim::FundamentalMatrixPath;
use crate::stats;

use super::{
    combine_verdicts, probe_controls, verdict_for, ConditionCell, ConditionReport, GridEcho,
};

/// Number of smallest-θ rungs over which the ladder maximum approximates
/// the superior limit.
pub const DEFAULT_LADDER_TAIL: usize = 4;

#[derive(Debug, Clone, Serialize)]
pub struct DplusTrace {
    pub theta: Vec<f64>,
    pub ratio: Vec<f64>,
    pub stderr: Vec<f64>,
    /// `2 ×` the maximum ratio over the ladder tail.
    pub dplus: f64,
    pub chosen_theta: f64,
    pub chosen_stderr: f64,
}

/// Window-ratio ladder for the coupling of a representation kernel with
/// the needle direction:
/// `r(θ) = (1/θ²) E ∫_τ^{τ+θ}∫_τ^t ⟨φ_v(s,t), Φ(τ)Φ(s)⁻¹σ_u(s)(v−ū(s))⟩ ds dt`,
/// reported with `∂⁺ = 2·max` over the ladder tail.
pub fn dplus_estimate(
    frames: &KernelFrames,
    fmp: &FundamentalMatrixPath,
    kernel: &dyn KernelSource,
    tau: f64,
    v: &DVector<f64>,
    theta_ladder: &[f64],
    tail: usize,
) -> Result<DplusTrace> {
    let p = frames.problem;
    let bundle = frames.bundle;
    let grid = bundle.grid;
    let dt = grid.dt();

    let windows: Result<Vec<(usize, usize)>> = theta_ladder
        .iter()
        .map(|&theta| grid.snap_window(tau, theta))
        .collect();
    let windows = windows?;
    if windows.is_empty() {
        return Err(SclError::config("theta ladder must not be empty"));
    }
    let start = windows[0].0;
    let k_max = windows.iter().map(|w| w.1).max().unwrap();
    let thetas: Vec<f64> = windows.iter().map(|w| w.1 as f64 * dt).collect();

    if kernel.is_null() {
        let zero = vec![0.0; windows.len()];
        return Ok(DplusTrace {
            theta: thetas.clone(),
            ratio: zero.clone(),
            stderr: zero,
            dplus: 0.0,
            chosen_theta: *thetas.last().unwrap(),
            chosen_stderr: 0.0,
        });
    }

    let paths = bundle.path_count();
    let mut per_rung: Vec<Vec<f64>> = vec![Vec::with_capacity(paths); windows.len()];
    for path in 0..paths {
        // coupling vector g(s) = Φ(τ)Φ(s)⁻¹ σ_u(s)(v − ū(s))
        let phi_tau = fmp.phi_mat(path, start);
        let mut coupling = Vec::with_capacity(k_max);
        for s in start..start + k_max {
            let t = grid.node(s);
            let x = bundle.state_vec(path, s);
            let u = bundle.control_vec(path, s);
            let ctx = crate::problem::CoefCtx {
                t,
                x: &x,
                u: &u,
                w_path: bundle.w_prefix(path, s),
            };
            let su = (p.diffusion.jac_u)(&ctx);
            let dv = v - &u;
            coupling.push(&phi_tau * fmp.psi_mat(path, s) * (su * dv));
        }
        // inner Lebesgue integral per outer node (left rule in s)
        let mut inner = vec![0.0; k_max + 1];
        for t_node in start + 1..=start + k_max {
            let mut acc = 0.0;
            for s in start..t_node {
                let kv = kernel.value(bundle, path, s, t_node);
                acc += dt * kv.dot(&coupling[s - start]);
            }
            inner[t_node - start] = acc;
        }
        // outer trapezoid: running full-weight sum with an endpoint
        // correction per rung
        let mut running = 0.0;
        let mut rung_iter = {
            let mut idx: Vec<usize> = (0..windows.len()).collect();
            idx.sort_by_key(|&i| windows[i].1);
            idx
        }
        .into_iter()
        .peekable();
        for offset in 1..=k_max {
            running += dt * inner[offset];
            while let Some(&ri) = rung_iter.peek() {
                if windows[ri].1 == offset {
                    let theta = thetas[ri];
                    let integral = running - 0.5 * dt * inner[offset];
                    per_rung[ri].push(integral / (theta * theta));
                    rung_iter.next();
                } else {
                    break;
                }
            }
        }
    }

    let mut ratio = Vec::with_capacity(windows.len());
    let mut stderr = Vec::with_capacity(windows.len());
    for rung in &per_rung {
        let (m, se) = stats::mean_stderr(rung);
        ratio.push(m);
        stderr.push(se);
    }
    // the tail = smallest θ entries; the ladder may arrive in any order
    let mut order: Vec<usize> = (0..thetas.len()).collect();
    order.sort_by(|&a, &b| thetas[a].total_cmp(&thetas[b]));
    let tail_n = tail.max(1).min(thetas.len());
    let mut best = order[0];
    for &i in order.iter().take(tail_n) {
        if ratio[i] > ratio[best] {
            best = i;
        }
    }
    Ok(DplusTrace {
        theta: thetas.clone(),
        ratio: ratio.clone(),
        stderr: stderr.clone(),
        dplus: 2.0 * ratio[best],
        chosen_theta: thetas[best],
        chosen_stderr: stderr[best],
    })
}

/// Samples of the coupled process `S(t)ᵀ(v − ū(t))` per (path, node);
/// deterministic frames are evaluated once and broadcast.
fn kernel_target_samples(frames: &KernelFrames, v: &DVector<f64>) -> Array3<f64> {
    let bundle = frames.bundle;
    let p = frames.problem;
    let (paths, steps, n) = (
        bundle.path_count(),
        bundle.grid.step_count(),
        p.state_dim,
    );
    let mut samples = Array3::zeros((paths, steps + 1, n));
    if frames.effective_paths() == 1 {
        for k in 0..=steps {
            let f = frames.frame(0, k);
            let u = bundle.control_vec(0, k);
            let val = f.s.transpose() * (v - &u);
            for path in 0..paths {
                for i in 0..n {
                    samples[[path, k, i]] = val[i];
                }
            }
        }
    } else {
        for path in 0..paths {
            for k in 0..=steps {
                let f = frames.frame(path, k);
                let u = bundle.control_vec(path, k);
                let val = f.s.transpose() * (v - &u);
                for i in 0..n {
                    samples[[path, k, i]] = val[i];
                }
            }
        }
    }
    samples
}

/// Instantaneous curvature term `⟨S(τ)b_u(τ)(v−ū(τ)), v−ū(τ)⟩` per
/// effective path at one node.
fn curvature_term(
    frames: &KernelFrames,
    tau_node: usize,
    v: &DVector<f64>,
) -> (f64, f64) {
    let bundle = frames.bundle;
    let paths = frames.effective_paths();
    let mut vals = Vec::with_capacity(paths);
    for path in 0..paths {
        let f = frames.frame(path, tau_node);
        let u = bundle.control_vec(path, tau_node);
        let dv = v - &u;
        vals.push((&f.s * (&f.b_u * &dv)).dot(&dv));
    }
    stats::mean_stderr(&vals)
}

/// Pointwise martingale-form test over a (τ, v) grid.
#[allow(clippy::too_many_arguments)]
pub fn pointwise_martingale_test(
    frames: &KernelFrames,
    fmp: &FundamentalMatrixPath,
    singularity: &SingularityReport,
    tau_grid: &[f64],
    theta_ladder: &[f64],
    degree: usize,
    gate_k: f64,
    config_echo: serde_json::Value,
) -> Result<ConditionReport> {
    if !singularity.verdict {
        return Ok(ConditionReport::not_applicable(
            "pointwise-martingale",
            "nominal control is not singular in the classical sense".to_string(),
            config_echo,
        ));
    }
    let p = frames.problem;
    let bundle = frames.bundle;
    let grid = bundle.grid;
    let v_grid = p.control_set.grid_vectors();

    let mut cells = Vec::new();
    for v in &v_grid {
        let samples = kernel_target_samples(frames, v);
        let kernel = martingale_representation(&samples, bundle, degree)?;
        for &tau in tau_grid {
            let tau_node = grid.nearest_node(tau);
            let (term1, se1) = curvature_term(frames, tau_node, v);
            let trace = dplus_estimate(frames, fmp, &kernel, tau, v, theta_ladder, DEFAULT_LADDER_TAIL)?;
            let value = term1 + trace.dplus;
            let stderr = (se1 * se1 + 4.0 * trace.chosen_stderr * trace.chosen_stderr).sqrt();
            cells.push(ConditionCell {
                tau: grid.node(tau_node),
                v: v.as_slice().to_vec(),
                value,
                stderr,
                verdict: verdict_for(value, stderr, gate_k),
                share_positive: None,
                dplus_trace: Some(trace),
            });
        }
    }
    // trivial probe at the nominal control value
    append_nominal_cells(frames, tau_grid, gate_k, &mut cells, |frames, tau_node, v| {
        let (t1, s1) = curvature_term(frames, tau_node, v);
        (t1, s1, None)
    });

    let global_verdict = combine_verdicts(&cells);
    Ok(ConditionReport {
        condition: "pointwise-martingale".to_string(),
        applicable: true,
        note: None,
        grid: GridEcho {
            tau: tau_grid.to_vec(),
            v: v_grid.iter().map(|v| v.as_slice().to_vec()).collect(),
        },
        cells,
        global_verdict,
        config_echo,
    })
}

fn append_nominal_cells(
    frames: &KernelFrames,
    tau_grid: &[f64],
    gate_k: f64,
    cells: &mut Vec<ConditionCell>,
    eval: impl Fn(&KernelFrames, usize, &DVector<f64>) -> (f64, f64, Option<f64>),
) {
    let bundle = frames.bundle;
    if !bundle.control.is_deterministic() {
        return;
    }
    for &tau in tau_grid {
        let tau_node = bundle.grid.nearest_node(tau);
        let probes = probe_controls(&[], &bundle.control.process, tau_node, tau);
        for v in probes {
            let (value, stderr, share) = eval(frames, tau_node, &v);
            cells.push(ConditionCell {
                tau: bundle.grid.node(tau_node),
                v: v.as_slice().to_vec(),
                value,
                stderr,
                verdict: verdict_for(value, stderr, gate_k),
                share_positive: share,
                dplus_trace: None,
            });
        }
    }
}

/// Pointwise Malliavin-form test; requires the diagonal-derivative
/// plug-ins for the mixed kernel and the nominal control.
#[allow(clippy::too_many_arguments)]
pub fn pointwise_malliavin_test(
    frames: &KernelFrames,
    singularity: &SingularityReport,
    s_plugin: Option<&MalliavinPlugin>,
    ubar_plugin: Option<&MalliavinPlugin>,
    tau_grid: &[f64],
    gate_k: f64,
    config_echo: serde_json::Value,
) -> Result<ConditionReport> {
    let (s_plugin, ubar_plugin) = match (s_plugin, ubar_plugin) {
        (Some(s), Some(u)) => (s, u),
        _ => {
            return Err(SclError::config(
                "pointwise Malliavin test needs the (C3) regularity plug-ins: diagonal derivatives of the mixed kernel and of the nominal control",
            ))
        }
    };
    if !singularity.verdict {
        return Ok(ConditionReport::not_applicable(
            "pointwise-malliavin",
            "nominal control is not singular in the classical sense".to_string(),
            config_echo,
        ));
    }
    let p = frames.problem;
    let bundle = frames.bundle;
    let grid = bundle.grid;
    let (n, m) = (p.state_dim, p.control_dim);
    if (s_plugin.rows, s_plugin.cols) != (m, n) {
        return Err(SclError::structural(format!(
            "mixed-kernel plug-in must be {m}×{n}"
        )));
    }
    if (ubar_plugin.rows, ubar_plugin.cols) != (m, 1) {
        return Err(SclError::structural(format!(
            "nominal-control plug-in must be {m}×1"
        )));
    }
    let v_grid = p.control_set.grid_vectors();
    let eff_paths = frames.effective_paths();

    let eval_cell = |tau_node: usize, v: &DVector<f64>| -> (f64, f64, Option<f64>) {
        let mut vals = Vec::with_capacity(eff_paths);
        let mut positive = 0usize;
        for path in 0..eff_paths {
            let f = frames.frame(path, tau_node);
            let u = bundle.control_vec(path, tau_node);
            let dv = v - &u;
            let ppath = plugin_path(bundle, path);
            let grad_s = s_plugin.diagonal_at(tau_node, &ppath);
            let grad_u_mat = ubar_plugin.diagonal_at(tau_node, &ppath);
            let grad_u = grad_u_mat.column(0).into_owned();
            let suv = &f.sigma_u * &dv;
            let val = (&f.s * (&f.b_u * &dv)).dot(&dv) + (&grad_s * &suv).dot(&dv)
                - (&f.s * &suv).dot(&grad_u);
            if val > 0.0 {
                positive += 1;
            }
            vals.push(val);
        }
        let (mean, se) = stats::mean_stderr(&vals);
        (mean, se, Some(positive as f64 / eff_paths as f64))
    };

    let mut cells = Vec::new();
    for v in &v_grid {
        for &tau in tau_grid {
            let tau_node = grid.nearest_node(tau);
            let (value, stderr, share) = eval_cell(tau_node, v);
            cells.push(ConditionCell {
                tau: grid.node(tau_node),
                v: v.as_slice().to_vec(),
                value,
                stderr,
                verdict: verdict_for(value, stderr, gate_k),
                share_positive: share,
                dplus_trace: None,
            });
        }
    }
    append_nominal_cells(frames, tau_grid, gate_k, &mut cells, |_, tau_node, v| {
        eval_cell(tau_node, v)
    });

    let global_verdict = combine_verdicts(&cells);
    Ok(ConditionReport {
        condition: "pointwise-malliavin".to_string(),
        applicable: true,
        note: None,
        grid: GridEcho {
            tau: tau_grid.to_vec(),
            v: v_grid.iter().map(|v| v.as_slice().to_vec()).collect(),
        },
        cells,
        global_verdict,
        config_echo,
    })
}

/// First-order stationarity triage: `⟨H_u(τ), v − ū(τ)⟩` over the grid.
/// Significantly positive entries rule the control out before any
/// second-order work.
pub fn needle_first_order_test(
    frames: &KernelFrames,
    tau_grid: &[f64],
    gate_k: f64,
    config_echo: serde_json::Value,
) -> ConditionReport {
    let p = frames.problem;
    let bundle = frames.bundle;
    let grid = bundle.grid;
    let v_grid = p.control_set.grid_vectors();
    let eff_paths = frames.effective_paths();

    let mut cells = Vec::new();
    for v in &v_grid {
        for &tau in tau_grid {
            let tau_node = grid.nearest_node(tau);
            let mut vals = Vec::with_capacity(eff_paths);
            for path in 0..eff_paths {
                let f = frames.frame(path, tau_node);
                let u = bundle.control_vec(path, tau_node);
                vals.push(f.h_u.dot(&(v - &u)));
            }
            let (value, stderr) = stats::mean_stderr(&vals);
            cells.push(ConditionCell {
                tau: grid.node(tau_node),
                v: v.as_slice().to_vec(),
                value,
                stderr,
                verdict: verdict_for(value, stderr, gate_k),
                share_positive: None,
                dplus_trace: None,
            });
        }
    }
    let global_verdict = combine_verdicts(&cells);
    ConditionReport {
        condition: "needle-first-order".to_string(),
        applicable: true,
        note: None,
        grid: GridEcho {
            tau: tau_grid.to_vec(),
            v: v_grid.iter().map(|v| v.as_slice().to_vec()).collect(),
        },
        cells,
        global_verdict,
        config_echo,
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CrossTermPoint {
    pub theta: f64,
    /// cross term divided by θ^{3/2}.
    pub scaled: f64,
    pub stderr: f64,
}

/// Scaling diagnostic for the needle machinery: the Itô cross term
/// `E∫⟨S(t)Φ(t)∫Φ⁻¹σ_u(v−ū)dW, v−ū(t)⟩dt` over the window, divided by
/// `θ^{3/2}`, decays toward zero along the ladder.
pub fn needle_cross_term_scaling(
    frames: &KernelFrames,
    fmp: &FundamentalMatrixPath,
    tau: f64,
    v: &DVector<f64>,
    theta_ladder: &[f64],
) -> Result<Vec<CrossTermPoint>> {
    let p = frames.problem;
    let bundle = frames.bundle;
    let grid = bundle.grid;
    let dt = grid.dt();
    let paths = bundle.path_count();

    let windows: Result<Vec<(usize, usize)>> = theta_ladder
        .iter()
        .map(|&theta| grid.snap_window(tau, theta))
        .collect();
    let windows = windows?;
    let start = windows[0].0;
    let k_max = windows.iter().map(|w| w.1).max().unwrap();

    let mut per_rung: Vec<Vec<f64>> = vec![Vec::with_capacity(paths); windows.len()];
    for path in 0..paths {
        // Itô sums M(t) = Σ_{s<t} Ψ(s)σ_u(s)(v−ū(s))ΔW_s and the outer
        // integrand ⟨S(t)Φ(t)M(t), v−ū(t)⟩
        let mut ito = DVector::<f64>::zeros(p.state_dim);
        let mut integrand = vec![0.0; k_max + 1];
        for offset in 1..=k_max {
            let s = start + offset - 1;
            {
                let t = grid.node(s);
                let x = bundle.state_vec(path, s);
                let u = bundle.control_vec(path, s);
                let ctx = crate::problem::CoefCtx {
                    t,
                    x: &x,
                    u: &u,
                    w_path: bundle.w_prefix(path, s),
                };
                let su = (p.diffusion.jac_u)(&ctx);
                ito += fmp.psi_mat(path, s) * (su * (v - &u)) * bundle.dw[[path, s]];
            }
            let t_node = start + offset;
            let f = frames.frame(if frames.effective_paths() == 1 { 0 } else { path }, t_node);
            let u_t = bundle.control_vec(path, t_node);
            let phi = fmp.phi_mat(path, t_node);
            integrand[offset] = (&f.s * (&phi * &ito)).dot(&(v - &u_t));
        }
        let mut running = 0.0;
        for offset in 1..=k_max {
            running += dt * integrand[offset];
            for (ri, w) in windows.iter().enumerate() {
                if w.1 == offset {
                    let theta = w.1 as f64 * dt;
                    let integral = running - 0.5 * dt * integrand[offset];
                    per_rung[ri].push(integral / theta.powf(1.5));
                }
            }
        }
    }

    Ok(windows
        .iter()
        .enumerate()
        .map(|(ri, w)| {
            let (m, se) = stats::mean_stderr(&per_rung[ri]);
            CrossTermPoint {
                theta: w.1 as f64 * dt,
                scaled: m,
                stderr: se,
            }
        })
        .collect())
}
