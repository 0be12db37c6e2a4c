//! Cross-path polynomial least squares used for conditional expectations.
//!
//! The same machinery backs the backward adjoint sweeps, the Clark–Ocone
//! check, and the martingale-representation kernels: build a multivariate
//! polynomial basis in a few per-path features, assemble the normal
//! equations deterministically, and solve with an eigenvalue cutoff so
//! degenerate bases (constant state paths, zero-variance features) reduce
//! gracefully to projections on the surviving columns instead of failing.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Result, SclError};
use crate::stats;

/// Relative eigenvalue cutoff below which normal-equation directions are
/// discarded.
const RANK_CUTOFF: f64 = 1e-10;

/// Multivariate polynomial basis of total degree `degree` in `vars`
/// features.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PolyBasis {
    pub vars: usize,
    pub degree: usize,
    /// Exponent tuples, one per basis column.
    exponents: Vec<Vec<u32>>,
}

impl PolyBasis {
    pub fn new(vars: usize, degree: usize) -> Self {
        let mut exponents = Vec::new();
        let mut current = vec![0u32; vars];
        collect_exponents(&mut exponents, &mut current, 0, degree as u32);
        exponents.sort();
        PolyBasis {
            vars,
            degree,
            exponents,
        }
    }

    pub fn len(&self) -> usize {
        self.exponents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.exponents.is_empty()
    }

    pub fn eval_into(&self, features: &[f64], out: &mut [f64]) {
        debug_assert_eq!(features.len(), self.vars);
        debug_assert_eq!(out.len(), self.len());
        for (col, exps) in self.exponents.iter().enumerate() {
            let mut v = 1.0;
            for (f, &e) in features.iter().zip(exps) {
                for _ in 0..e {
                    v *= *f;
                }
            }
            out[col] = v;
        }
    }
}

fn collect_exponents(out: &mut Vec<Vec<u32>>, current: &mut Vec<u32>, var: usize, left: u32) {
    if var == current.len() {
        out.push(current.clone());
        return;
    }
    for e in 0..=left {
        current[var] = e;
        collect_exponents(out, current, var + 1, left - e);
        current[var] = 0;
    }
}

/// Feature standardization estimated from the sample (mean/scale per
/// feature). Zero-variance features keep scale 1 and center at the mean so
/// their columns collapse onto the constant column and fall to the rank
/// cutoff.
#[derive(Debug, Clone)]
pub struct Standardizer {
    pub means: Vec<f64>,
    pub scales: Vec<f64>,
}

impl Standardizer {
    pub fn fit(features: &[Vec<f64>]) -> Self {
        let vars = features.len();
        let mut means = Vec::with_capacity(vars);
        let mut scales = Vec::with_capacity(vars);
        for f in features {
            let (m, _) = stats::mean_stderr(f);
            let var = if f.len() > 1 {
                let sq: Vec<f64> = f.iter().map(|v| (v - m) * (v - m)).collect();
                stats::compensated_sum(&sq) / (f.len() as f64 - 1.0)
            } else {
                0.0
            };
            means.push(m);
            scales.push(if var.sqrt() > 1e-14 { var.sqrt() } else { 1.0 });
        }
        Standardizer { means, scales }
    }

    pub fn apply_into(&self, raw: &[f64], out: &mut [f64]) {
        for i in 0..raw.len() {
            out[i] = (raw[i] - self.means[i]) / self.scales[i];
        }
    }
}

/// A fitted least-squares regression: coefficients per target column.
#[derive(Debug, Clone)]
pub struct Fit {
    pub basis: PolyBasis,
    pub standardizer: Standardizer,
    /// cols × targets coefficient matrix.
    pub coefficients: DMatrix<f64>,
    pub effective_rank: usize,
}

impl Fit {
    pub fn predict_into(&self, features_raw: &[f64], scratch: &mut [f64], out: &mut [f64]) {
        let mut std_features = [0.0; 8];
        let stdf = &mut std_features[..features_raw.len()];
        self.standardizer.apply_into(features_raw, stdf);
        self.basis.eval_into(stdf, scratch);
        for tgt in 0..out.len() {
            let col = self.coefficients.column(tgt);
            let mut acc = 0.0;
            for c in 0..scratch.len() {
                acc += col[c] * scratch[c];
            }
            out[tgt] = acc;
        }
    }
}

/// Solve the normal equations `Gram · β = rhs` with an eigenvalue cutoff.
///
/// Returns the coefficient matrix and the retained rank. Errors only when
/// no direction survives or the data is non-finite.
pub fn solve_normal_equations(
    gram: &DMatrix<f64>,
    rhs: &DMatrix<f64>,
) -> Result<(DMatrix<f64>, usize)> {
    if gram.iter().any(|v| !v.is_finite()) || rhs.iter().any(|v| !v.is_finite()) {
        return Err(SclError::Basis("non-finite regression data".to_string()));
    }
    let eig = gram.clone().symmetric_eigen();
    let max_eig = eig.eigenvalues.iter().cloned().fold(0.0f64, f64::max);
    if max_eig <= 0.0 {
        return Err(SclError::Basis("regression matrix has no usable direction".to_string()));
    }
    let cutoff = max_eig * RANK_CUTOFF;
    let mut rank = 0;
    let cols = gram.nrows();
    let mut inv_diag = DVector::zeros(cols);
    for i in 0..cols {
        if eig.eigenvalues[i] > cutoff {
            inv_diag[i] = 1.0 / eig.eigenvalues[i];
            rank += 1;
        }
    }
    if rank == 0 {
        return Err(SclError::Basis("regression matrix is rank deficient".to_string()));
    }
    // pseudo-inverse action: V diag⁺ Vᵀ rhs
    let vt_rhs = eig.eigenvectors.transpose() * rhs;
    let mut scaled = vt_rhs;
    for i in 0..cols {
        for j in 0..scaled.ncols() {
            scaled[(i, j)] *= inv_diag[i];
        }
    }
    Ok((&eig.eigenvectors * scaled, rank))
}

/// Fit targets on a polynomial basis of the given per-path features.
///
/// `features[v][i]` is feature `v` on path `i`; `targets[t][i]` likewise.
/// Assembly runs in path order, so the result is schedule-independent.
pub fn fit(features: &[Vec<f64>], targets: &[Vec<f64>], degree: usize) -> Result<Fit> {
    let vars = features.len();
    let paths = features.first().map(|f| f.len()).unwrap_or(0);
    if paths == 0 {
        return Err(SclError::Basis("no samples to regress".to_string()));
    }
    let basis = PolyBasis::new(vars, degree);
    let cols = basis.len();
    let standardizer = Standardizer::fit(features);

    let mut gram = DMatrix::zeros(cols, cols);
    let mut rhs = DMatrix::zeros(cols, targets.len());
    let mut raw = vec![0.0; vars];
    let mut stdf = vec![0.0; vars];
    let mut row = vec![0.0; cols];
    for i in 0..paths {
        for v in 0..vars {
            raw[v] = features[v][i];
        }
        standardizer.apply_into(&raw, &mut stdf);
        basis.eval_into(&stdf, &mut row);
        for a in 0..cols {
            for b in a..cols {
                gram[(a, b)] += row[a] * row[b];
            }
            for (t, target) in targets.iter().enumerate() {
                rhs[(a, t)] += row[a] * target[i];
            }
        }
    }
    for a in 0..cols {
        for b in 0..a {
            gram[(a, b)] = gram[(b, a)];
        }
    }

    let (coefficients, effective_rank) = solve_normal_equations(&gram, &rhs)?;
    Ok(Fit {
        basis,
        standardizer,
        coefficients,
        effective_rank,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn basis_has_expected_column_count() {
        // total degree 2 in 2 vars: 1, a, b, a², ab, b²
        assert_eq!(PolyBasis::new(2, 2).len(), 6);
        assert_eq!(PolyBasis::new(1, 2).len(), 3);
    }

    #[test]
    fn recovers_polynomial_exactly() {
        let xs: Vec<f64> = (0..200).map(|i| -1.0 + i as f64 / 100.0).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 2.0 - 3.0 * x + 0.5 * x * x).collect();
        let fit = fit(&[xs.clone()], &[ys.clone()], 2).unwrap();
        let mut scratch = vec![0.0; fit.basis.len()];
        let mut out = [0.0];
        for (x, y) in xs.iter().zip(&ys) {
            fit.predict_into(&[*x], &mut scratch, &mut out);
            assert!((out[0] - y).abs() < 1e-10);
        }
        assert_eq!(fit.effective_rank, 3);
    }

    #[test]
    fn degenerate_feature_reduces_to_mean() {
        let xs = vec![0.0; 50];
        let ys: Vec<f64> = (0..50).map(|i| i as f64).collect();
        let fit = fit(&[xs], &[ys], 2).unwrap();
        assert!(fit.effective_rank < 3);
        let mut scratch = vec![0.0; fit.basis.len()];
        let mut out = [0.0];
        fit.predict_into(&[0.0], &mut scratch, &mut out);
        assert!((out[0] - 24.5).abs() < 1e-9);
    }

    #[test]
    fn non_finite_targets_error() {
        let xs = vec![0.0, 1.0, 2.0];
        let ys = vec![0.0, f64::NAN, 2.0];
        assert!(fit(&[xs], &[ys], 1).is_err());
    }
}
