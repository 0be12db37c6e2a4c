//! Linear-quadratic problem constructor with exact derivative oracles.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Result, SclError};
use crate::problem::{
    CoefCtx, CoefficientClass, ControlProblem, ControlSet, ScalarOracle, TerminalOracle,
    VectorOracle,
};

/// Deterministic matrix coefficient, constant or a continuous function of
/// time.
#[derive(Clone)]
pub enum MatrixPath {
    Constant(DMatrix<f64>),
    TimeVarying(Arc<dyn Fn(f64) -> DMatrix<f64> + Send + Sync>),
}

impl MatrixPath {
    pub fn at(&self, t: f64) -> DMatrix<f64> {
        match self {
            MatrixPath::Constant(m) => m.clone(),
            MatrixPath::TimeVarying(f) => f(t),
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        match self {
            MatrixPath::Constant(m) => m.shape(),
            MatrixPath::TimeVarying(f) => f(0.0).shape(),
        }
    }
}

impl From<DMatrix<f64>> for MatrixPath {
    fn from(m: DMatrix<f64>) -> Self {
        MatrixPath::Constant(m)
    }
}

/// Coefficient data of an LQ problem:
/// `b = Ax + Bu`, `σ = Cx + Du`,
/// `f = ½(⟨Rx, x⟩ + 2⟨Mx, u⟩ + ⟨Nu, u⟩)`, `h = ½⟨Gx, x⟩`.
#[derive(Clone)]
pub struct LqData {
    pub a: MatrixPath,
    pub b: MatrixPath,
    pub c: MatrixPath,
    pub d: MatrixPath,
    pub r: MatrixPath,
    pub m: MatrixPath,
    pub n: MatrixPath,
    pub g: DMatrix<f64>,
}

fn require_shape(name: &str, got: (usize, usize), want: (usize, usize)) -> Result<()> {
    if got != want {
        return Err(SclError::structural(format!(
            "{name} has shape {}x{}, expected {}x{}",
            got.0, got.1, want.0, want.1
        )));
    }
    Ok(())
}

fn require_symmetric(name: &str, m: &DMatrix<f64>) -> Result<()> {
    let defect = (m - m.transpose()).norm();
    if defect > 1e-12 * (1.0 + m.norm()) {
        return Err(SclError::Symmetry {
            oracle: name.to_string(),
            defect,
        });
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
pub fn make_lq_problem(
    a: impl Into<MatrixPath>,
    b: impl Into<MatrixPath>,
    c: impl Into<MatrixPath>,
    d: impl Into<MatrixPath>,
    r: impl Into<MatrixPath>,
    m: impl Into<MatrixPath>,
    n: impl Into<MatrixPath>,
    g: DMatrix<f64>,
    horizon: f64,
    initial_state: Vec<f64>,
    control_set: ControlSet,
) -> Result<ControlProblem> {
    let (a, b, c, d, r, m, n) = (
        a.into(),
        b.into(),
        c.into(),
        d.into(),
        r.into(),
        m.into(),
        n.into(),
    );
    let sd = a.shape().0;
    let cd = b.shape().1;
    require_shape("A", a.shape(), (sd, sd))?;
    require_shape("B", b.shape(), (sd, cd))?;
    require_shape("C", c.shape(), (sd, sd))?;
    require_shape("D", d.shape(), (sd, cd))?;
    require_shape("R", r.shape(), (sd, sd))?;
    require_shape("M", m.shape(), (cd, sd))?;
    require_shape("N", n.shape(), (cd, cd))?;
    require_shape("G", g.shape(), (sd, sd))?;
    // symmetry is required for the quadratic forms; probe time-varying
    // coefficients at a few times
    for t in [0.0, 0.37 * horizon, horizon] {
        require_symmetric("R", &r.at(t))?;
        require_symmetric("N", &n.at(t))?;
    }
    require_symmetric("G", &g)?;
    if initial_state.len() != sd {
        return Err(SclError::structural(format!(
            "initial state has length {}, expected {}",
            initial_state.len(),
            sd
        )));
    }
    if control_set.dim() != cd {
        return Err(SclError::structural(format!(
            "control set dimension {} does not match B/D column count {}",
            control_set.dim(),
            cd
        )));
    }

    let lq = Arc::new(LqData {
        a,
        b,
        c,
        d,
        r,
        m,
        n,
        g: g.clone(),
    });

    let drift = {
        let lq_v = lq.clone();
        let value =
            Arc::new(move |ctx: &CoefCtx| lq_v.a.at(ctx.t) * ctx.x + lq_v.b.at(ctx.t) * ctx.u);
        let lq_x = lq.clone();
        let jac_x = Arc::new(move |ctx: &CoefCtx| lq_x.a.at(ctx.t));
        let lq_u = lq.clone();
        let jac_u = Arc::new(move |ctx: &CoefCtx| lq_u.b.at(ctx.t));
        VectorOracle::affine_like(sd, cd, value, jac_x, jac_u)
    };
    let diffusion = {
        let lq_v = lq.clone();
        let value =
            Arc::new(move |ctx: &CoefCtx| lq_v.c.at(ctx.t) * ctx.x + lq_v.d.at(ctx.t) * ctx.u);
        let lq_x = lq.clone();
        let jac_x = Arc::new(move |ctx: &CoefCtx| lq_x.c.at(ctx.t));
        let lq_u = lq.clone();
        let jac_u = Arc::new(move |ctx: &CoefCtx| lq_u.d.at(ctx.t));
        VectorOracle::affine_like(sd, cd, value, jac_x, jac_u)
    };
    let running_cost = {
        let l0 = lq.clone();
        let l1 = lq.clone();
        let l2 = lq.clone();
        let l3 = lq.clone();
        let l4 = lq.clone();
        let l5 = lq.clone();
        ScalarOracle {
            value: Arc::new(move |ctx: &CoefCtx| {
                let (rm, mm, nm) = (l0.r.at(ctx.t), l0.m.at(ctx.t), l0.n.at(ctx.t));
                0.5 * ((&rm * ctx.x).dot(ctx.x)
                    + 2.0 * (&mm * ctx.x).dot(ctx.u)
                    + (&nm * ctx.u).dot(ctx.u))
            }),
            grad_x: Arc::new(move |ctx: &CoefCtx| {
                l1.r.at(ctx.t) * ctx.x + l1.m.at(ctx.t).transpose() * ctx.u
            }),
            grad_u: Arc::new(move |ctx: &CoefCtx| {
                l2.m.at(ctx.t) * ctx.x + l2.n.at(ctx.t) * ctx.u
            }),
            hess_xx: Arc::new(move |ctx: &CoefCtx| l3.r.at(ctx.t)),
            hess_xu: Arc::new(move |ctx: &CoefCtx| l4.m.at(ctx.t)),
            hess_uu: Arc::new(move |ctx: &CoefCtx| l5.n.at(ctx.t)),
        }
    };
    let terminal_cost = TerminalOracle::quadratic(g);

    let problem = ControlProblem {
        state_dim: sd,
        control_dim: cd,
        horizon,
        initial_state: DVector::from_vec(initial_state),
        drift,
        diffusion,
        running_cost,
        terminal_cost,
        control_set,
        coefficient_class: CoefficientClass::Deterministic,
        lq_data: Some(lq),
        label: "lq".to_string(),
    };
    problem.check_shape()?;
    Ok(problem)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lq_oracles_reproduce_quadratic_forms() {
        let a = DMatrix::from_row_slice(2, 2, &[0.1, 0.2, 0.0, -0.3]);
        let b = DMatrix::from_row_slice(2, 1, &[1.0, 0.5]);
        let c = DMatrix::from_row_slice(2, 2, &[0.0, 0.1, 0.1, 0.0]);
        let d = DMatrix::from_row_slice(2, 1, &[0.2, 0.0]);
        let r = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let m = DMatrix::from_row_slice(1, 2, &[0.3, -0.2]);
        let n = DMatrix::from_row_slice(1, 1, &[1.5]);
        let g = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        let set = ControlSet::boxed(vec![-1.0], vec![1.0]).unwrap();
        let p = make_lq_problem(
            a.clone(),
            b,
            c,
            d,
            r.clone(),
            m.clone(),
            n.clone(),
            g.clone(),
            1.0,
            vec![0.0, 0.0],
            set,
        )
        .unwrap();

        let x = DVector::from_column_slice(&[0.7, -0.4]);
        let u = DVector::from_column_slice(&[0.9]);
        let ctx = CoefCtx::probe(0.3, &x, &u);
        let f = (p.running_cost.value)(&ctx);
        let expect =
            0.5 * ((&r * &x).dot(&x) + 2.0 * (&m * &x).dot(&u) + (&n * &u).dot(&u));
        assert!((f - expect).abs() < 1e-15);
        let h = (p.terminal_cost.value)(&x, &[]);
        assert!((h - 0.5 * (&g * &x).dot(&x)).abs() < 1e-15);
        let bx = (p.drift.jac_x)(&ctx);
        assert_eq!(bx, a);
    }

    #[test]
    fn nonsymmetric_weights_are_rejected() {
        let z2 = DMatrix::<f64>::zeros(2, 2);
        let z21 = DMatrix::<f64>::zeros(2, 1);
        let z12 = DMatrix::<f64>::zeros(1, 2);
        let z1 = DMatrix::<f64>::zeros(1, 1);
        let g_bad = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        let set = ControlSet::boxed(vec![-1.0], vec![1.0]).unwrap();
        let res = make_lq_problem(
            z2.clone(),
            z21.clone(),
            z2.clone(),
            z21,
            z2,
            z12,
            z1,
            g_bad,
            1.0,
            vec![0.0, 0.0],
            set,
        );
        assert!(matches!(res, Err(SclError::Symmetry { .. })));
    }

    #[test]
    fn all_zero_matrices_build_the_trivial_problem() {
        let z1 = DMatrix::<f64>::zeros(1, 1);
        let set = ControlSet::boxed(vec![-1.0], vec![1.0]).unwrap();
        let p = make_lq_problem(
            z1.clone(),
            z1.clone(),
            z1.clone(),
            z1.clone(),
            z1.clone(),
            z1.clone(),
            z1.clone(),
            z1,
            1.0,
            vec![0.0],
            set,
        )
        .unwrap();
        let x = DVector::from_column_slice(&[0.4]);
        let u = DVector::from_column_slice(&[0.2]);
        let ctx = CoefCtx::probe(0.5, &x, &u);
        assert_eq!((p.drift.value)(&ctx)[0], 0.0);
        assert_eq!((p.diffusion.value)(&ctx)[0], 0.0);
        assert_eq!((p.running_cost.value)(&ctx), 0.0);
        assert_eq!((p.terminal_cost.value)(&x, &[]), 0.0);
    }
}
