//! Built-in example problems and the JSON problem loader.

use nalgebra::DMatrix;
use serde_json::Value;

use crate::error::{Result, SclError};
use crate::expr::Expr;
use crate::problem::{
    make_lq_problem, CoefficientClass, ControlProblem, ControlSet, ScalarOracle, TerminalOracle,
    VectorOracle,
};

/// Scalar singular-control example: `b = u`, `σ = u`, `f = u²/2`,
/// `h = −x²/2` on `[0, 1]` with `U = [−1, 1]` and `x₀ = 0`.
///
/// At `ū ≡ 0` the first adjoint vanishes, the second is identically one,
/// and the pointwise second-order tests detect non-optimality.
pub fn example33() -> ControlProblem {
    let one = DMatrix::from_row_slice(1, 1, &[1.0]);
    let zero = DMatrix::<f64>::zeros(1, 1);
    let set = ControlSet::boxed(vec![-1.0], vec![1.0]).expect("unit box");
    let mut p = make_lq_problem(
        zero.clone(),
        one.clone(),
        zero.clone(),
        one.clone(),
        zero.clone(),
        DMatrix::<f64>::zeros(1, 1),
        one,
        -DMatrix::identity(1, 1),
        1.0,
        vec![0.0],
        set,
    )
    .expect("valid preset");
    p.label = "example33".to_string();
    p
}

/// Two-dimensional singular-control example: `b = Bu`, `σ = Du`,
/// `h = ½⟨Gx, x⟩` with `B = diag(1,0)`, `D = diag(0,1)`, `G = diag(1,0)`,
/// `U = [−1,1]²`, `x₀ = 0`.
///
/// `ū ≡ 0` is singular and optimal; the pointwise tests are satisfied with
/// equality exactly on the second control axis.
pub fn example34(horizon: f64) -> ControlProblem {
    let b = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
    let d = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, 1.0]);
    let g = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
    let z = DMatrix::<f64>::zeros(2, 2);
    let set = ControlSet::boxed(vec![-1.0, -1.0], vec![1.0, 1.0]).expect("unit box");
    let mut p = make_lq_problem(
        z.clone(),
        b,
        z.clone(),
        d,
        z.clone(),
        z.clone(),
        z,
        g,
        horizon,
        vec![0.0, 0.0],
        set,
    )
    .expect("valid preset");
    p.label = "example34".to_string();
    p
}

/// Nonlinear scalar preset `b = sin(x) + u`, `σ = u`, `f = u²/2`,
/// `h = −x²/2` used for variational-order measurements.
pub fn nonlinear_sin() -> ControlProblem {
    use crate::problem::CoefCtx;
    use nalgebra::DVector;
    use std::sync::Arc;

    let set = ControlSet::boxed(vec![-1.0], vec![1.0]).expect("unit box");
    let drift = VectorOracle {
        value: Arc::new(|c: &CoefCtx| DVector::from_column_slice(&[c.x[0].sin() + c.u[0]])),
        jac_x: Arc::new(|c: &CoefCtx| DMatrix::from_row_slice(1, 1, &[c.x[0].cos()])),
        jac_u: Arc::new(|_| DMatrix::from_row_slice(1, 1, &[1.0])),
        hess_xx: Arc::new(|c: &CoefCtx| vec![DMatrix::from_row_slice(1, 1, &[-c.x[0].sin()])]),
        hess_xu: Arc::new(|_| vec![DMatrix::zeros(1, 1)]),
        hess_uu: Arc::new(|_| vec![DMatrix::zeros(1, 1)]),
    };
    let diffusion = VectorOracle::affine_like(
        1,
        1,
        Arc::new(|c: &CoefCtx| DVector::from_column_slice(&[c.u[0]])),
        Arc::new(|_| DMatrix::zeros(1, 1)),
        Arc::new(|_| DMatrix::from_row_slice(1, 1, &[1.0])),
    );
    let running_cost = ScalarOracle {
        value: Arc::new(|c: &CoefCtx| 0.5 * c.u[0] * c.u[0]),
        grad_x: Arc::new(|_| DVector::zeros(1)),
        grad_u: Arc::new(|c: &CoefCtx| DVector::from_column_slice(&[c.u[0]])),
        hess_xx: Arc::new(|_| DMatrix::zeros(1, 1)),
        hess_xu: Arc::new(|_| DMatrix::zeros(1, 1)),
        hess_uu: Arc::new(|_| DMatrix::from_row_slice(1, 1, &[1.0])),
    };
    let terminal_cost = TerminalOracle::quadratic(-DMatrix::identity(1, 1));
    ControlProblem {
        state_dim: 1,
        control_dim: 1,
        horizon: 1.0,
        initial_state: nalgebra::DVector::from_column_slice(&[0.5]),
        drift,
        diffusion,
        running_cost,
        terminal_cost,
        control_set: set,
        coefficient_class: CoefficientClass::Deterministic,
        lq_data: None,
        label: "sin-drift".to_string(),
    }
}

/// Scalar linear test problem `b = μx`, `σ = s·x` (control enters nothing);
/// used as a geometric-Brownian oracle fixture.
pub fn scalar_linear(mu: f64, s: f64, x0: f64) -> ControlProblem {
    let set = ControlSet::boxed(vec![-1.0], vec![1.0]).expect("unit box");
    let mut p = make_lq_problem(
        DMatrix::from_row_slice(1, 1, &[mu]),
        DMatrix::<f64>::zeros(1, 1),
        DMatrix::from_row_slice(1, 1, &[s]),
        DMatrix::<f64>::zeros(1, 1),
        DMatrix::<f64>::zeros(1, 1),
        DMatrix::<f64>::zeros(1, 1),
        DMatrix::<f64>::zeros(1, 1),
        DMatrix::<f64>::zeros(1, 1),
        1.0,
        vec![x0],
        set,
    )
    .expect("valid preset");
    p.label = format!("scalar-linear(mu={mu},s={s})");
    p
}

fn json_f64(v: &Value, key: &str, default: Option<f64>) -> Result<f64> {
    match v.get(key) {
        Some(Value::Number(n)) => n
            .as_f64()
            .ok_or_else(|| SclError::config(format!("'{key}' is not a finite number"))),
        None => default.ok_or_else(|| SclError::config(format!("missing key '{key}'"))),
        _ => Err(SclError::config(format!("'{key}' must be a number"))),
    }
}

fn json_usize(v: &Value, key: &str) -> Result<usize> {
    v.get(key)
        .and_then(|n| n.as_u64())
        .map(|n| n as usize)
        .ok_or_else(|| SclError::config(format!("missing or invalid key '{key}'")))
}

fn json_vec(v: &Value, key: &str) -> Result<Vec<f64>> {
    let arr = v
        .get(key)
        .and_then(|a| a.as_array())
        .ok_or_else(|| SclError::config(format!("missing or invalid array '{key}'")))?;
    arr.iter()
        .map(|e| {
            e.as_f64()
                .ok_or_else(|| SclError::config(format!("'{key}' contains a non-number")))
        })
        .collect()
}

fn json_matrix(v: &Value, key: &str, rows: usize, cols: usize) -> Result<DMatrix<f64>> {
    match v.get(key) {
        None => Ok(DMatrix::zeros(rows, cols)),
        Some(Value::Array(rs)) => {
            if rs.len() != rows {
                return Err(SclError::config(format!("matrix '{key}' must have {rows} rows")));
            }
            let mut m = DMatrix::zeros(rows, cols);
            for (i, row) in rs.iter().enumerate() {
                let row = row
                    .as_array()
                    .ok_or_else(|| SclError::config(format!("matrix '{key}' row is not an array")))?;
                if row.len() != cols {
                    return Err(SclError::config(format!(
                        "matrix '{key}' must have {cols} columns"
                    )));
                }
                for (j, e) in row.iter().enumerate() {
                    m[(i, j)] = e
                        .as_f64()
                        .ok_or_else(|| SclError::config(format!("matrix '{key}' has a non-number")))?;
                }
            }
            Ok(m)
        }
        _ => Err(SclError::config(format!("matrix '{key}' must be an array of rows"))),
    }
}

fn control_set_from_json(v: &Value, m: usize) -> Result<ControlSet> {
    match v.get("control_set") {
        None => ControlSet::boxed(vec![-1.0; m], vec![1.0; m]),
        Some(cs) => {
            let kind = cs
                .get("kind")
                .and_then(|k| k.as_str())
                .ok_or_else(|| SclError::config("control_set needs a 'kind'"))?;
            let mut set = match kind {
                "box" => ControlSet::boxed(json_vec(cs, "lower")?, json_vec(cs, "upper")?)?,
                "polytope" => {
                    let verts = cs
                        .get("vertices")
                        .and_then(|a| a.as_array())
                        .ok_or_else(|| SclError::config("polytope needs 'vertices'"))?;
                    let vertices: Result<Vec<Vec<f64>>> = verts
                        .iter()
                        .map(|r| {
                            r.as_array()
                                .ok_or_else(|| SclError::config("vertex is not an array"))?
                                .iter()
                                .map(|e| {
                                    e.as_f64().ok_or_else(|| {
                                        SclError::config("vertex has a non-number")
                                    })
                                })
                                .collect()
                        })
                        .collect();
                    ControlSet::polytope(vertices?)?
                }
                other => {
                    return Err(SclError::config(format!("unknown control_set kind '{other}'")))
                }
            };
            if let Some(grid) = cs.get("sample_grid") {
                let pts = grid
                    .as_array()
                    .ok_or_else(|| SclError::config("sample_grid must be an array"))?;
                let parsed: Result<Vec<Vec<f64>>> = pts
                    .iter()
                    .map(|r| {
                        r.as_array()
                            .ok_or_else(|| SclError::config("grid point is not an array"))?
                            .iter()
                            .map(|e| {
                                e.as_f64()
                                    .ok_or_else(|| SclError::config("grid point has a non-number"))
                            })
                            .collect()
                    })
                    .collect();
                set = set.with_grid(parsed?)?;
            }
            Ok(set)
        }
    }
}

/// Load a problem from a JSON document.
///
/// Keys: `kind` ∈ {`example33`, `example34`, `lq`, `custom-expr`}; `lq`
/// takes `n, m, T, x0` plus matrices `A B C D R M N G`; `custom-expr`
/// takes expression strings `b[i]`, `sigma[i]`, `f`, `h` over
/// `(t, x[i], u[j])`; both accept an optional `control_set`.
pub fn problem_from_json(doc: &Value) -> Result<ControlProblem> {
    let kind = doc
        .get("kind")
        .and_then(|k| k.as_str())
        .ok_or_else(|| SclError::config("problem spec needs a string 'kind'"))?;
    match kind {
        "example33" => Ok(example33()),
        "example34" => Ok(example34(json_f64(doc, "T", Some(1.0))?)),
        "lq" => {
            let n = json_usize(doc, "n")?;
            let m = json_usize(doc, "m")?;
            let horizon = json_f64(doc, "T", Some(1.0))?;
            let x0 = json_vec(doc, "x0")?;
            let set = control_set_from_json(doc, m)?;
            make_lq_problem(
                json_matrix(doc, "A", n, n)?,
                json_matrix(doc, "B", n, m)?,
                json_matrix(doc, "C", n, n)?,
                json_matrix(doc, "D", n, m)?,
                json_matrix(doc, "R", n, n)?,
                json_matrix(doc, "M", m, n)?,
                json_matrix(doc, "N", m, m)?,
                json_matrix(doc, "G", n, n)?,
                horizon,
                x0,
                set,
            )
        }
        "custom-expr" => {
            let n = json_usize(doc, "n")?;
            let m = json_usize(doc, "m")?;
            let horizon = json_f64(doc, "T", Some(1.0))?;
            let x0 = json_vec(doc, "x0")?;
            if x0.len() != n {
                return Err(SclError::config("x0 length must equal n"));
            }
            let parse_list = |key: &str| -> Result<Vec<Expr>> {
                let arr = doc
                    .get(key)
                    .and_then(|a| a.as_array())
                    .ok_or_else(|| SclError::config(format!("missing expression list '{key}'")))?;
                if arr.len() != n {
                    return Err(SclError::config(format!("'{key}' must list {n} expressions")));
                }
                arr.iter()
                    .map(|e| {
                        let s = e
                            .as_str()
                            .ok_or_else(|| SclError::config(format!("'{key}' has a non-string")))?;
                        Expr::parse(s)
                    })
                    .collect()
            };
            let b_exprs = parse_list("b")?;
            let sigma_exprs = parse_list("sigma")?;
            let f_src = doc
                .get("f")
                .and_then(|e| e.as_str())
                .ok_or_else(|| SclError::config("missing expression 'f'"))?;
            let h_src = doc
                .get("h")
                .and_then(|e| e.as_str())
                .ok_or_else(|| SclError::config("missing expression 'h'"))?;
            let f_expr = Expr::parse(f_src)?;
            let h_expr = Expr::parse(h_src)?;
            if h_expr.depends_on_control_or_time() {
                return Err(SclError::structural(
                    "terminal cost 'h' may depend on the state only",
                ));
            }
            let set = control_set_from_json(doc, m)?;

            use crate::expr::Var;
            use std::sync::Arc;
            let h_grad: Vec<Expr> = (0..n).map(|i| h_expr.derivative(Var::State(i))).collect();
            let h_hess: Vec<Vec<Expr>> = h_grad
                .iter()
                .map(|g| (0..n).map(|i| g.derivative(Var::State(i))).collect())
                .collect();
            let hv = h_expr.clone();
            let hg = h_grad.clone();
            let terminal_cost = TerminalOracle {
                value: Arc::new(move |x, _| hv.eval(0.0, x.as_slice(), &[])),
                grad: Arc::new(move |x, _| {
                    nalgebra::DVector::from_iterator(
                        hg.len(),
                        hg.iter().map(|g| g.eval(0.0, x.as_slice(), &[])),
                    )
                }),
                hess: Arc::new(move |x, _| {
                    DMatrix::from_fn(n, n, |i, k| h_hess[i][k].eval(0.0, x.as_slice(), &[]))
                }),
            };

            let problem = ControlProblem {
                state_dim: n,
                control_dim: m,
                horizon,
                initial_state: nalgebra::DVector::from_vec(x0),
                drift: VectorOracle::from_exprs(&b_exprs, n, m),
                diffusion: VectorOracle::from_exprs(&sigma_exprs, n, m),
                running_cost: ScalarOracle::from_expr(&f_expr, n, m),
                terminal_cost,
                control_set: set,
                coefficient_class: CoefficientClass::Deterministic,
                lq_data: None,
                label: "custom-expr".to_string(),
            };
            problem.check_shape()?;
            Ok(problem)
        }
        other => Err(SclError::config(format!("unknown problem kind '{other}'"))),
    }
}
