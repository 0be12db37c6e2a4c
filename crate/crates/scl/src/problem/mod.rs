//! Problem definition: coefficient oracles, control sets, admissible
//! controls, presets, and the standing-assumption validator.

mod control;
mod control_set;
mod lq;
mod presets;
mod validate;

pub use control::{AdmissibleControl, ControlProcess};
pub use control_set::{ControlSet, ControlSetKind};
pub use lq::{make_lq_problem, LqData, MatrixPath};
pub use presets::{example33, example34, nonlinear_sin, problem_from_json, scalar_linear};
pub use validate::{validate_problem, OracleCheck, SymmetryCheck, ValidateConfig, ValidationReport};

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Result, SclError};

/// Evaluation point handed to every coefficient oracle.
///
/// Random coefficients read the driving path through `w_path`, the Brownian
/// values at grid nodes up to and including the current one; this realizes
/// path-functional randomness while keeping adaptedness mechanical.
/// Deterministic coefficients ignore it (it is empty during probe
/// evaluations).
pub struct CoefCtx<'a> {
    pub t: f64,
    pub x: &'a DVector<f64>,
    pub u: &'a DVector<f64>,
    pub w_path: &'a [f64],
}

impl<'a> CoefCtx<'a> {
    pub fn probe(t: f64, x: &'a DVector<f64>, u: &'a DVector<f64>) -> Self {
        CoefCtx {
            t,
            x,
            u,
            w_path: &[],
        }
    }
}

pub type VecFn = Arc<dyn Fn(&CoefCtx) -> DVector<f64> + Send + Sync>;
pub type MatFn = Arc<dyn Fn(&CoefCtx) -> DMatrix<f64> + Send + Sync>;
pub type MatListFn = Arc<dyn Fn(&CoefCtx) -> Vec<DMatrix<f64>> + Send + Sync>;
pub type ScalFn = Arc<dyn Fn(&CoefCtx) -> f64 + Send + Sync>;

/// Vector-valued coefficient (drift or diffusion) with exact derivatives.
///
/// Jacobian conventions: `jac_x` is n×n, `jac_u` is n×m. The Hessian lists
/// hold one block per output component; `hess_xu` blocks are m×n with rows
/// indexing the control derivative and columns the state derivative.
#[derive(Clone)]
pub struct VectorOracle {
    pub value: VecFn,
    pub jac_x: MatFn,
    pub jac_u: MatFn,
    pub hess_xx: MatListFn,
    pub hess_xu: MatListFn,
    pub hess_uu: MatListFn,
}

impl VectorOracle {
    /// Oracle with identically zero second derivatives.
    pub fn affine_like(n: usize, m: usize, value: VecFn, jac_x: MatFn, jac_u: MatFn) -> Self {
        VectorOracle {
            value,
            jac_x,
            jac_u,
            hess_xx: Arc::new(move |_| vec![DMatrix::zeros(n, n); n]),
            hess_xu: Arc::new(move |_| vec![DMatrix::zeros(m, n); n]),
            hess_uu: Arc::new(move |_| vec![DMatrix::zeros(m, m); n]),
        }
    }

    /// Build an oracle from one expression per output component, with
    /// symbolic first and second derivatives.
    pub fn from_exprs(exprs: &[crate::expr::Expr], n: usize, m: usize) -> Self {
        use crate::expr::{Expr, Var};
        assert_eq!(exprs.len(), n);
        let value_exprs: Vec<Expr> = exprs.to_vec();
        let dx: Vec<Vec<Expr>> = exprs
            .iter()
            .map(|e| (0..n).map(|i| e.derivative(Var::State(i))).collect())
            .collect();
        let du: Vec<Vec<Expr>> = exprs
            .iter()
            .map(|e| (0..m).map(|j| e.derivative(Var::Control(j))).collect())
            .collect();
        let dxx: Vec<Vec<Vec<Expr>>> = dx
            .iter()
            .map(|row| {
                row.iter()
                    .map(|e| (0..n).map(|i| e.derivative(Var::State(i))).collect())
                    .collect()
            })
            .collect();
        // rows: control index, cols: state index
        let dxu: Vec<Vec<Vec<Expr>>> = value_exprs
            .iter()
            .map(|e| {
                (0..m)
                    .map(|j| {
                        let eu = e.derivative(Var::Control(j));
                        (0..n).map(|i| eu.derivative(Var::State(i))).collect()
                    })
                    .collect()
            })
            .collect();
        let duu: Vec<Vec<Vec<Expr>>> = du
            .iter()
            .map(|row| {
                row.iter()
                    .map(|e| (0..m).map(|j| e.derivative(Var::Control(j))).collect())
                    .collect()
            })
            .collect();

        let ve = value_exprs.clone();
        let value: VecFn = Arc::new(move |c: &CoefCtx| {
            DVector::from_iterator(
                ve.len(),
                ve.iter().map(|e| e.eval(c.t, c.x.as_slice(), c.u.as_slice())),
            )
        });
        let jac_x: MatFn = Arc::new(move |c: &CoefCtx| {
            DMatrix::from_fn(n, n, |i, k| dx[i][k].eval(c.t, c.x.as_slice(), c.u.as_slice()))
        });
        let jac_u: MatFn = Arc::new(move |c: &CoefCtx| {
            DMatrix::from_fn(n, m, |i, j| du[i][j].eval(c.t, c.x.as_slice(), c.u.as_slice()))
        });
        let hess_xx: MatListFn = Arc::new(move |c: &CoefCtx| {
            (0..n)
                .map(|comp| {
                    DMatrix::from_fn(n, n, |i, k| {
                        dxx[comp][i][k].eval(c.t, c.x.as_slice(), c.u.as_slice())
                    })
                })
                .collect()
        });
        let hess_xu: MatListFn = Arc::new(move |c: &CoefCtx| {
            (0..n)
                .map(|comp| {
                    DMatrix::from_fn(m, n, |j, i| {
                        dxu[comp][j][i].eval(c.t, c.x.as_slice(), c.u.as_slice())
                    })
                })
                .collect()
        });
        let hess_uu: MatListFn = Arc::new(move |c: &CoefCtx| {
            (0..n)
                .map(|comp| {
                    DMatrix::from_fn(m, m, |j, l| {
                        duu[comp][j][l].eval(c.t, c.x.as_slice(), c.u.as_slice())
                    })
                })
                .collect()
        });
        VectorOracle {
            value,
            jac_x,
            jac_u,
            hess_xx,
            hess_xu,
            hess_uu,
        }
    }
}

/// Scalar running cost with exact derivatives (`hess_xu` is m×n).
#[derive(Clone)]
pub struct ScalarOracle {
    pub value: ScalFn,
    pub grad_x: VecFn,
    pub grad_u: VecFn,
    pub hess_xx: MatFn,
    pub hess_xu: MatFn,
    pub hess_uu: MatFn,
}

impl ScalarOracle {
    pub fn zero(n: usize, m: usize) -> Self {
        ScalarOracle {
            value: Arc::new(|_| 0.0),
            grad_x: Arc::new(move |_| DVector::zeros(n)),
            grad_u: Arc::new(move |_| DVector::zeros(m)),
            hess_xx: Arc::new(move |_| DMatrix::zeros(n, n)),
            hess_xu: Arc::new(move |_| DMatrix::zeros(m, n)),
            hess_uu: Arc::new(move |_| DMatrix::zeros(m, m)),
        }
    }

    pub fn from_expr(e: &crate::expr::Expr, n: usize, m: usize) -> Self {
        use crate::expr::{Expr, Var};
        let dx: Vec<Expr> = (0..n).map(|i| e.derivative(Var::State(i))).collect();
        let du: Vec<Expr> = (0..m).map(|j| e.derivative(Var::Control(j))).collect();
        let dxx: Vec<Vec<Expr>> = dx
            .iter()
            .map(|g| (0..n).map(|i| g.derivative(Var::State(i))).collect())
            .collect();
        let dxu: Vec<Vec<Expr>> = du
            .iter()
            .map(|g| (0..n).map(|i| g.derivative(Var::State(i))).collect())
            .collect();
        let duu: Vec<Vec<Expr>> = du
            .iter()
            .map(|g| (0..m).map(|j| g.derivative(Var::Control(j))).collect())
            .collect();
        let e0 = e.clone();
        let dx2 = dx.clone();
        let du2 = du.clone();
        ScalarOracle {
            value: Arc::new(move |c: &CoefCtx| e0.eval(c.t, c.x.as_slice(), c.u.as_slice())),
            grad_x: Arc::new(move |c: &CoefCtx| {
                DVector::from_iterator(
                    dx2.len(),
                    dx2.iter().map(|g| g.eval(c.t, c.x.as_slice(), c.u.as_slice())),
                )
            }),
            grad_u: Arc::new(move |c: &CoefCtx| {
                DVector::from_iterator(
                    du2.len(),
                    du2.iter().map(|g| g.eval(c.t, c.x.as_slice(), c.u.as_slice())),
                )
            }),
            hess_xx: Arc::new(move |c: &CoefCtx| {
                DMatrix::from_fn(n, n, |i, k| dxx[i][k].eval(c.t, c.x.as_slice(), c.u.as_slice()))
            }),
            hess_xu: Arc::new(move |c: &CoefCtx| {
                DMatrix::from_fn(m, n, |j, i| dxu[j][i].eval(c.t, c.x.as_slice(), c.u.as_slice()))
            }),
            hess_uu: Arc::new(move |c: &CoefCtx| {
                DMatrix::from_fn(m, m, |j, l| duu[j][l].eval(c.t, c.x.as_slice(), c.u.as_slice()))
            }),
        }
    }
}

pub type TermFn = Arc<dyn Fn(&DVector<f64>, &[f64]) -> f64 + Send + Sync>;
pub type TermGradFn = Arc<dyn Fn(&DVector<f64>, &[f64]) -> DVector<f64> + Send + Sync>;
pub type TermHessFn = Arc<dyn Fn(&DVector<f64>, &[f64]) -> DMatrix<f64> + Send + Sync>;

/// Terminal cost `h(x)` with gradient and Hessian; the second argument is
/// the Brownian path for random terminal data.
#[derive(Clone)]
pub struct TerminalOracle {
    pub value: TermFn,
    pub grad: TermGradFn,
    pub hess: TermHessFn,
}

impl TerminalOracle {
    pub fn zero(n: usize) -> Self {
        TerminalOracle {
            value: Arc::new(|_, _| 0.0),
            grad: Arc::new(move |_, _| DVector::zeros(n)),
            hess: Arc::new(move |_, _| DMatrix::zeros(n, n)),
        }
    }

    /// Quadratic terminal cost `x ↦ ½⟨Gx, x⟩`.
    pub fn quadratic(g: DMatrix<f64>) -> Self {
        let g1 = g.clone();
        let g2 = g.clone();
        TerminalOracle {
            value: Arc::new(move |x, _| 0.5 * (&g * x).dot(x)),
            grad: Arc::new(move |x, _| &g1 * x),
            hess: Arc::new(move |_, _| g2.clone()),
        }
    }
}

/// Whether the coefficients depend on the driving path.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum CoefficientClass {
    Deterministic,
    Random,
}

/// A stochastic optimal control problem on `[0, T]` with scalar noise.
#[derive(Clone)]
pub struct ControlProblem {
    pub state_dim: usize,
    pub control_dim: usize,
    pub horizon: f64,
    pub initial_state: DVector<f64>,
    pub drift: VectorOracle,
    pub diffusion: VectorOracle,
    pub running_cost: ScalarOracle,
    pub terminal_cost: TerminalOracle,
    pub control_set: ControlSet,
    pub coefficient_class: CoefficientClass,
    /// Present when the problem was built by [`make_lq_problem`].
    pub lq_data: Option<Arc<LqData>>,
    pub label: String,
}

impl ControlProblem {
    /// Basic shape coherence; full oracle validation is
    /// [`validate_problem`].
    pub fn check_shape(&self) -> Result<()> {
        if self.state_dim == 0 || self.control_dim == 0 {
            return Err(SclError::structural("state and control dimensions must be positive"));
        }
        if self.initial_state.len() != self.state_dim {
            return Err(SclError::structural(format!(
                "initial state has length {}, expected {}",
                self.initial_state.len(),
                self.state_dim
            )));
        }
        if self.control_set.dim() != self.control_dim {
            return Err(SclError::structural(format!(
                "control set dimension {} does not match control_dim {}",
                self.control_set.dim(),
                self.control_dim
            )));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(SclError::structural("horizon must be a positive finite real"));
        }
        Ok(())
    }
}
