//! Standing-assumption validation on probe points.
//!
//! Derivative oracles are spot-checked against central finite differences
//! of their parents, required-symmetric Hessian blocks are checked
//! numerically, and the control set is re-validated. Uniform boundedness
//! is declared metadata and only sampled here, never proven.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Result, SclError};
use crate::problem::{CoefCtx, ControlProblem, ControlSetKind};

#[derive(Debug, Clone, Serialize)]
pub struct ValidateConfig {
    pub probe_count: usize,
    pub fd_step: f64,
    pub tolerance: f64,
    pub symmetry_tolerance: f64,
    pub seed: u64,
}

impl Default for ValidateConfig {
    fn default() -> Self {
        ValidateConfig {
            probe_count: 8,
            fd_step: 1e-5,
            tolerance: 1e-6,
            symmetry_tolerance: 1e-10,
            seed: 0x5c1_0001,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct OracleCheck {
    pub name: String,
    pub max_rel_residual: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SymmetryCheck {
    pub name: String,
    pub defect: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ValidationReport {
    pub label: String,
    pub oracle_residuals: Vec<OracleCheck>,
    pub symmetry: Vec<SymmetryCheck>,
    pub control_set_ok: bool,
    pub verdict: bool,
    pub config: ValidateConfig,
}

struct Residuals {
    checks: Vec<OracleCheck>,
}

impl Residuals {
    fn record(&mut self, name: &str, value: f64) {
        if let Some(c) = self.checks.iter_mut().find(|c| c.name == name) {
            if value > c.max_rel_residual {
                c.max_rel_residual = value;
            }
        } else {
            self.checks.push(OracleCheck {
                name: name.to_string(),
                max_rel_residual: value,
            });
        }
    }
}

fn rel_diff_mat(analytic: &DMatrix<f64>, fd: &DMatrix<f64>) -> f64 {
    (analytic - fd).norm() / analytic.norm().max(1.0)
}

fn rel_diff_vec(analytic: &DVector<f64>, fd: &DVector<f64>) -> f64 {
    (analytic - fd).norm() / analytic.norm().max(1.0)
}

fn finite_or_err(name: &str, values: &[f64], ctx: &CoefCtx) -> Result<()> {
    if values.iter().any(|v| !v.is_finite()) {
        return Err(SclError::Oracle {
            oracle: name.to_string(),
            t: ctx.t,
            x: ctx.x.as_slice().to_vec(),
            u: ctx.u.as_slice().to_vec(),
        });
    }
    Ok(())
}

fn symmetry_defect(m: &DMatrix<f64>) -> f64 {
    (m - m.transpose()).norm() / m.norm().max(1.0)
}

/// Validate a problem's oracles against the declared dimensions and each
/// other. Returns the report; hard errors (shape mismatch, non-finite
/// oracle output) abort instead.
pub fn validate_problem(p: &ControlProblem, cfg: &ValidateConfig) -> Result<ValidationReport> {
    p.check_shape()?;
    let n = p.state_dim;
    let m = p.control_dim;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut res = Residuals { checks: Vec::new() };
    let mut sym: Vec<SymmetryCheck> = Vec::new();
    let mut record_sym = |name: String, defect: f64| {
        if let Some(c) = sym.iter_mut().find(|c| c.name == name) {
            if defect > c.defect {
                c.defect = defect;
            }
        } else {
            sym.push(SymmetryCheck { name, defect });
        }
    };

    let control_probe = |rng: &mut ChaCha8Rng| -> DVector<f64> {
        match &p.control_set.kind {
            ControlSetKind::Box { lower, upper } => DVector::from_iterator(
                m,
                (0..m).map(|i| rng.gen_range(lower[i]..=upper[i].max(lower[i] + f64::MIN_POSITIVE))),
            ),
            ControlSetKind::Polytope { vertices } => {
                let mut weights: Vec<f64> = (0..vertices.len()).map(|_| rng.gen::<f64>()).collect();
                let total: f64 = weights.iter().sum();
                weights.iter_mut().for_each(|w| *w /= total);
                let mut v = DVector::zeros(m);
                for (w, vert) in weights.iter().zip(vertices) {
                    v += *w * DVector::from_column_slice(vert);
                }
                v
            }
        }
    };

    for probe in 0..cfg.probe_count {
        let t = rng.gen::<f64>() * p.horizon;
        let x = if probe == 0 {
            p.initial_state.clone()
        } else {
            &p.initial_state
                + DVector::from_iterator(n, (0..n).map(|_| rng.gen::<f64>() * 2.0 - 1.0))
        };
        let u = control_probe(&mut rng);
        let ctx = CoefCtx::probe(t, &x, &u);
        let h = cfg.fd_step;

        // shape and finiteness of every oracle output
        let b = (p.drift.value)(&ctx);
        if b.len() != n {
            return Err(SclError::structural(format!(
                "drift returned length {}, expected {}",
                b.len(),
                n
            )));
        }
        finite_or_err("drift", b.as_slice(), &ctx)?;
        let s = (p.diffusion.value)(&ctx);
        if s.len() != n {
            return Err(SclError::structural(format!(
                "diffusion returned length {}, expected {}",
                s.len(),
                n
            )));
        }
        finite_or_err("diffusion", s.as_slice(), &ctx)?;
        let f = (p.running_cost.value)(&ctx);
        finite_or_err("running_cost", &[f], &ctx)?;
        let hval = (p.terminal_cost.value)(&x, &[]);
        finite_or_err("terminal_cost", &[hval], &ctx)?;

        for (name, jac, want) in [
            ("drift.jac_x", (p.drift.jac_x)(&ctx), (n, n)),
            ("drift.jac_u", (p.drift.jac_u)(&ctx), (n, m)),
            ("diffusion.jac_x", (p.diffusion.jac_x)(&ctx), (n, n)),
            ("diffusion.jac_u", (p.diffusion.jac_u)(&ctx), (n, m)),
        ] {
            if jac.shape() != want {
                return Err(SclError::structural(format!(
                    "{name} has shape {:?}, expected {:?}",
                    jac.shape(),
                    want
                )));
            }
            finite_or_err(name, jac.as_slice(), &ctx)?;
        }

        // first derivatives against central differences of the parent
        let fd_jac_x = |value: &crate::problem::VecFn| -> DMatrix<f64> {
            let mut j = DMatrix::zeros(n, n);
            for k in 0..n {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[k] += h;
                xm[k] -= h;
                let vp = value(&CoefCtx::probe(t, &xp, &u));
                let vm = value(&CoefCtx::probe(t, &xm, &u));
                j.set_column(k, &((vp - vm) / (2.0 * h)));
            }
            j
        };
        let fd_jac_u = |value: &crate::problem::VecFn| -> DMatrix<f64> {
            let mut j = DMatrix::zeros(n, m);
            for k in 0..m {
                let mut up = u.clone();
                let mut um = u.clone();
                up[k] += h;
                um[k] -= h;
                let vp = value(&CoefCtx::probe(t, &x, &up));
                let vm = value(&CoefCtx::probe(t, &x, &um));
                j.set_column(k, &((vp - vm) / (2.0 * h)));
            }
            j
        };

        res.record("drift.jac_x", rel_diff_mat(&(p.drift.jac_x)(&ctx), &fd_jac_x(&p.drift.value)));
        res.record("drift.jac_u", rel_diff_mat(&(p.drift.jac_u)(&ctx), &fd_jac_u(&p.drift.value)));
        res.record(
            "diffusion.jac_x",
            rel_diff_mat(&(p.diffusion.jac_x)(&ctx), &fd_jac_x(&p.diffusion.value)),
        );
        res.record(
            "diffusion.jac_u",
            rel_diff_mat(&(p.diffusion.jac_u)(&ctx), &fd_jac_u(&p.diffusion.value)),
        );

        // running cost gradients
        let mut fd_grad_x = DVector::zeros(n);
        let mut fd_grad_u = DVector::zeros(m);
        for k in 0..n {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[k] += h;
            xm[k] -= h;
            fd_grad_x[k] = ((p.running_cost.value)(&CoefCtx::probe(t, &xp, &u))
                - (p.running_cost.value)(&CoefCtx::probe(t, &xm, &u)))
                / (2.0 * h);
        }
        for k in 0..m {
            let mut up = u.clone();
            let mut um = u.clone();
            up[k] += h;
            um[k] -= h;
            fd_grad_u[k] = ((p.running_cost.value)(&CoefCtx::probe(t, &x, &up))
                - (p.running_cost.value)(&CoefCtx::probe(t, &x, &um)))
                / (2.0 * h);
        }
        res.record("running_cost.grad_x", rel_diff_vec(&(p.running_cost.grad_x)(&ctx), &fd_grad_x));
        res.record("running_cost.grad_u", rel_diff_vec(&(p.running_cost.grad_u)(&ctx), &fd_grad_u));

        // terminal cost gradient
        let mut fd_hx = DVector::zeros(n);
        for k in 0..n {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[k] += h;
            xm[k] -= h;
            fd_hx[k] =
                ((p.terminal_cost.value)(&xp, &[]) - (p.terminal_cost.value)(&xm, &[])) / (2.0 * h);
        }
        res.record("terminal_cost.grad", rel_diff_vec(&(p.terminal_cost.grad)(&x, &[]), &fd_hx));

        // Hessian blocks against differences of first derivatives
        let bxx = (p.drift.hess_xx)(&ctx);
        let bxu = (p.drift.hess_xu)(&ctx);
        let buu = (p.drift.hess_uu)(&ctx);
        let sxx = (p.diffusion.hess_xx)(&ctx);
        let sxu = (p.diffusion.hess_xu)(&ctx);
        let suu = (p.diffusion.hess_uu)(&ctx);
        for (name, blocks, rows, cols) in [
            ("drift.hess_xx", &bxx, n, n),
            ("drift.hess_xu", &bxu, m, n),
            ("drift.hess_uu", &buu, m, m),
            ("diffusion.hess_xx", &sxx, n, n),
            ("diffusion.hess_xu", &sxu, m, n),
            ("diffusion.hess_uu", &suu, m, m),
        ] {
            if blocks.len() != n {
                return Err(SclError::structural(format!(
                    "{name} must supply one block per state component"
                )));
            }
            for blk in blocks {
                if blk.shape() != (rows, cols) {
                    return Err(SclError::structural(format!(
                        "{name} block has shape {:?}, expected ({rows}, {cols})",
                        blk.shape()
                    )));
                }
                finite_or_err(name, blk.as_slice(), &ctx)?;
            }
        }

        // componentwise FD checks of vector Hessians via Jacobian oracles
        for comp in 0..n {
            let fd_xx = {
                let mut mat = DMatrix::zeros(n, n);
                for k in 0..n {
                    let mut xp = x.clone();
                    let mut xm = x.clone();
                    xp[k] += h;
                    xm[k] -= h;
                    let jp = (p.drift.jac_x)(&CoefCtx::probe(t, &xp, &u));
                    let jm = (p.drift.jac_x)(&CoefCtx::probe(t, &xm, &u));
                    for i in 0..n {
                        mat[(i, k)] = (jp[(comp, i)] - jm[(comp, i)]) / (2.0 * h);
                    }
                }
                mat
            };
            res.record("drift.hess_xx", rel_diff_mat(&bxx[comp], &fd_xx));
            record_sym(format!("drift.hess_xx[{comp}]"), symmetry_defect(&bxx[comp]));
            record_sym(format!("drift.hess_uu[{comp}]"), symmetry_defect(&buu[comp]));
            record_sym(
                format!("diffusion.hess_xx[{comp}]"),
                symmetry_defect(&sxx[comp]),
            );
            record_sym(
                format!("diffusion.hess_uu[{comp}]"),
                symmetry_defect(&suu[comp]),
            );

            // mixed block: rows = control, cols = state, from u-differences
            // of the state Jacobian
            let fd_xu = {
                let mut mat = DMatrix::zeros(m, n);
                for j in 0..m {
                    let mut up = u.clone();
                    let mut um = u.clone();
                    up[j] += h;
                    um[j] -= h;
                    let jp = (p.drift.jac_x)(&CoefCtx::probe(t, &x, &up));
                    let jm = (p.drift.jac_x)(&CoefCtx::probe(t, &x, &um));
                    for i in 0..n {
                        mat[(j, i)] = (jp[(comp, i)] - jm[(comp, i)]) / (2.0 * h);
                    }
                }
                mat
            };
            res.record("drift.hess_xu", rel_diff_mat(&bxu[comp], &fd_xu));

            let fd_suu = {
                let mut mat = DMatrix::zeros(m, m);
                for j in 0..m {
                    let mut up = u.clone();
                    let mut um = u.clone();
                    up[j] += h;
                    um[j] -= h;
                    let jp = (p.diffusion.jac_u)(&CoefCtx::probe(t, &x, &up));
                    let jm = (p.diffusion.jac_u)(&CoefCtx::probe(t, &x, &um));
                    for l in 0..m {
                        mat[(j, l)] = (jp[(comp, l)] - jm[(comp, l)]) / (2.0 * h);
                    }
                }
                mat
            };
            res.record("diffusion.hess_uu", rel_diff_mat(&suu[comp], &fd_suu));
        }

        // scalar-cost Hessians
        let fxx = (p.running_cost.hess_xx)(&ctx);
        let fxu = (p.running_cost.hess_xu)(&ctx);
        let fuu = (p.running_cost.hess_uu)(&ctx);
        if fxu.shape() != (m, n) {
            return Err(SclError::structural(format!(
                "running_cost.hess_xu has shape {:?}, expected ({m}, {n})",
                fxu.shape()
            )));
        }
        record_sym("running_cost.hess_xx".to_string(), symmetry_defect(&fxx));
        record_sym("running_cost.hess_uu".to_string(), symmetry_defect(&fuu));
        let fd_fuu = {
            let mut mat = DMatrix::zeros(m, m);
            for j in 0..m {
                let mut up = u.clone();
                let mut um = u.clone();
                up[j] += h;
                um[j] -= h;
                let gp = (p.running_cost.grad_u)(&CoefCtx::probe(t, &x, &up));
                let gm = (p.running_cost.grad_u)(&CoefCtx::probe(t, &x, &um));
                for l in 0..m {
                    mat[(j, l)] = (gp[l] - gm[l]) / (2.0 * h);
                }
            }
            mat
        };
        res.record("running_cost.hess_uu", rel_diff_mat(&fuu, &fd_fuu));
        let fd_fxu = {
            let mut mat = DMatrix::zeros(m, n);
            for j in 0..m {
                let mut up = u.clone();
                let mut um = u.clone();
                up[j] += h;
                um[j] -= h;
                let gp = (p.running_cost.grad_x)(&CoefCtx::probe(t, &x, &up));
                let gm = (p.running_cost.grad_x)(&CoefCtx::probe(t, &x, &um));
                for i in 0..n {
                    mat[(j, i)] = (gp[i] - gm[i]) / (2.0 * h);
                }
            }
            mat
        };
        res.record("running_cost.hess_xu", rel_diff_mat(&fxu, &fd_fxu));

        let hxx = (p.terminal_cost.hess)(&x, &[]);
        record_sym("terminal_cost.hess".to_string(), symmetry_defect(&hxx));
        let fd_hxx = {
            let mut mat = DMatrix::zeros(n, n);
            for k in 0..n {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[k] += h;
                xm[k] -= h;
                let gp = (p.terminal_cost.grad)(&xp, &[]);
                let gm = (p.terminal_cost.grad)(&xm, &[]);
                for i in 0..n {
                    mat[(i, k)] = (gp[i] - gm[i]) / (2.0 * h);
                }
            }
            mat
        };
        res.record("terminal_cost.hess", rel_diff_mat(&hxx, &fd_hxx));
    }

    let control_set_ok = p.control_set.validate().is_ok();
    let residual_ok = res.checks.iter().all(|c| c.max_rel_residual <= cfg.tolerance);
    let symmetry_ok = sym.iter().all(|c| c.defect <= cfg.symmetry_tolerance);
    let verdict = control_set_ok && residual_ok && symmetry_ok;

    Ok(ValidationReport {
        label: p.label.clone(),
        oracle_residuals: res.checks,
        symmetry: sym,
        control_set_ok,
        verdict,
        config: cfg.clone(),
    })
}
