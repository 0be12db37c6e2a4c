//! Martingale-representation kernels by cross-path regression.
//!
//! An adapted square-integrable process `φ(t)` equals its mean plus a
//! stochastic integral `∫₀ᵗ φ_v(s,t) dW(s)`. The kernel is estimated per
//! `(s, t)` pair by projecting the centered residual
//! `(φ(t) − Π_s φ(t))·ΔW_s/Δt` onto a polynomial basis of
//! `(x̄(s), W(s))`, where `Π_s` is the same-basis projection of `φ(t)`.
//! Centering makes deterministic processes come out with an exactly zero
//! kernel, which several worked examples rely on.
//!
//! Storage is per-(s, t) coefficient vectors only; kernel values are
//! reconstructed on demand.

use nalgebra::{DMatrix, DVector};
use ndarray::Array3;

use crate::error::{Result, SclError};
use crate::regress::{PolyBasis, Standardizer};
use crate::sim::PathBundle;
use crate::stats;

/// Anything that can serve kernel values `φ_v(s, t)` per path.
pub trait KernelSource {
    /// Dimension of the represented process.
    fn dim(&self) -> usize;
    /// Kernel value on one path at grid nodes `s < t`.
    fn value(&self, bundle: &PathBundle, path: usize, s_node: usize, t_node: usize)
        -> DVector<f64>;
    /// True when the kernel is identically zero, allowing integrals over
    /// it to short-circuit exactly.
    fn is_null(&self) -> bool {
        false
    }
}

struct NodeBasis {
    standardizer: Standardizer,
    /// Per-path basis rows at this node (paths × cols).
    rows: Vec<f64>,
    cols: usize,
    eig_vectors: DMatrix<f64>,
    inv_eigenvalues: DVector<f64>,
}

/// Estimated representation kernel for one process.
pub struct MartingaleKernel {
    pub dim: usize,
    pub degree: usize,
    /// Cross-path mean of φ(t) per node.
    pub mean: Vec<DVector<f64>>,
    /// True when the process was detected cross-path deterministic; the
    /// kernel is identically zero then.
    pub deterministic: bool,
    basis: PolyBasis,
    /// Standardizers per s node (empty on the deterministic fast path).
    standardizers: Vec<Standardizer>,
    /// Coefficients per (s, t) pair, `s < t`, stored as
    /// `coeffs[t-1][s] : cols × dim`, empty on the fast path.
    coeffs: Vec<Vec<DMatrix<f64>>>,
}

impl KernelSource for MartingaleKernel {
    fn dim(&self) -> usize {
        self.dim
    }

    fn is_null(&self) -> bool {
        self.deterministic
    }

    fn value(
        &self,
        bundle: &PathBundle,
        path: usize,
        s_node: usize,
        t_node: usize,
    ) -> DVector<f64> {
        if self.deterministic || s_node >= t_node {
            return DVector::zeros(self.dim);
        }
        let feats = node_features(bundle, path, s_node);
        let mut std_feats = vec![0.0; feats.len()];
        self.standardizers[s_node].apply_into(&feats, &mut std_feats);
        let mut row = vec![0.0; self.basis.len()];
        self.basis.eval_into(&std_feats, &mut row);
        let coef = &self.coeffs[t_node - 1][s_node];
        let mut out = DVector::zeros(self.dim);
        for d in 0..self.dim {
            let mut acc = 0.0;
            for c in 0..row.len() {
                acc += coef[(c, d)] * row[c];
            }
            out[d] = acc;
        }
        out
    }
}

fn node_features(bundle: &PathBundle, path: usize, node: usize) -> Vec<f64> {
    let n = bundle.state_dim;
    let mut f = Vec::with_capacity(n + 1);
    for i in 0..n {
        f.push(bundle.state[[path, node, i]]);
    }
    f.push(bundle.w[[path, node]]);
    f
}

fn build_node_basis(bundle: &PathBundle, node: usize, basis: &PolyBasis) -> Result<NodeBasis> {
    let paths = bundle.path_count();
    let vars = bundle.state_dim + 1;
    let cols_full = basis.len();

    let mut feature_cols: Vec<Vec<f64>> = vec![Vec::with_capacity(paths); vars];
    for path in 0..paths {
        let f = node_features(bundle, path, node);
        for v in 0..vars {
            feature_cols[v].push(f[v]);
        }
    }
    let standardizer = Standardizer::fit(&feature_cols);

    let mut rows = vec![0.0; paths * cols_full];
    let mut stdf = vec![0.0; vars];
    let mut raw = vec![0.0; vars];
    let mut gram = DMatrix::<f64>::zeros(cols_full, cols_full);
    for path in 0..paths {
        for v in 0..vars {
            raw[v] = feature_cols[v][path];
        }
        standardizer.apply_into(&raw, &mut stdf);
        let row = &mut rows[path * cols_full..(path + 1) * cols_full];
        basis.eval_into(&stdf, row);
        for a in 0..cols_full {
            for b in a..cols_full {
                gram[(a, b)] += row[a] * row[b];
            }
        }
    }
    for a in 0..cols_full {
        for b in 0..a {
            gram[(a, b)] = gram[(b, a)];
        }
    }
    let eig = gram.symmetric_eigen();
    let max_eig = eig.eigenvalues.iter().cloned().fold(0.0f64, f64::max);
    if max_eig <= 0.0 {
        return Err(SclError::Basis("degenerate basis at a grid node".to_string()));
    }
    let mut inv = DVector::zeros(cols_full);
    for i in 0..cols_full {
        if eig.eigenvalues[i] > max_eig * 1e-10 {
            inv[i] = 1.0 / eig.eigenvalues[i];
        }
    }
    Ok(NodeBasis {
        standardizer,
        rows,
        cols: cols_full,
        eig_vectors: eig.eigenvectors,
        inv_eigenvalues: inv,
    })
}

impl NodeBasis {
    /// Solve the node normal equations for the given per-path targets.
    fn solve(&self, targets: &[Vec<f64>]) -> DMatrix<f64> {
        let paths = targets[0].len();
        let mut rhs = DMatrix::<f64>::zeros(self.cols, targets.len());
        for path in 0..paths {
            let row = &self.rows[path * self.cols..(path + 1) * self.cols];
            for (t, target) in targets.iter().enumerate() {
                let y = target[path];
                for c in 0..self.cols {
                    rhs[(c, t)] += row[c] * y;
                }
            }
        }
        let vt_rhs = self.eig_vectors.transpose() * rhs;
        let mut scaled = vt_rhs;
        for i in 0..self.cols {
            for j in 0..scaled.ncols() {
                scaled[(i, j)] *= self.inv_eigenvalues[i];
            }
        }
        &self.eig_vectors * scaled
    }

    fn predict(&self, coef: &DMatrix<f64>, path: usize, out: &mut [f64]) {
        let row = &self.rows[path * self.cols..(path + 1) * self.cols];
        for (t, o) in out.iter_mut().enumerate() {
            let mut acc = 0.0;
            for c in 0..self.cols {
                acc += coef[(c, t)] * row[c];
            }
            *o = acc;
        }
    }
}

/// Estimate the representation kernel of a sampled process
/// (`samples`: paths × nodes × dim).
pub fn martingale_representation(
    samples: &Array3<f64>,
    bundle: &PathBundle,
    degree: usize,
) -> Result<MartingaleKernel> {
    let paths = bundle.path_count();
    let steps = bundle.grid.step_count();
    let dim = samples.shape()[2];
    if samples.shape()[0] != paths || samples.shape()[1] != steps + 1 {
        return Err(SclError::structural(
            "process samples must match the bundle's paths and nodes",
        ));
    }
    let basis = PolyBasis::new(bundle.state_dim + 1, degree);

    let mut mean = Vec::with_capacity(steps + 1);
    let mut max_var = 0.0f64;
    for t in 0..=steps {
        let mut m = DVector::zeros(dim);
        for d in 0..dim {
            let col: Vec<f64> = (0..paths).map(|i| samples[[i, t, d]]).collect();
            let (mu, se) = stats::mean_stderr(&col);
            m[d] = mu;
            max_var = max_var.max(se * se * paths as f64);
        }
        mean.push(m);
    }

    // cross-path deterministic processes have an exactly zero kernel
    if max_var < 1e-24 {
        return Ok(MartingaleKernel {
            dim,
            degree,
            mean,
            deterministic: true,
            basis,
            standardizers: Vec::new(),
            coeffs: Vec::new(),
        });
    }

    let dt = bundle.grid.dt();
    let mut standardizers: Vec<Option<Standardizer>> = (0..steps).map(|_| None).collect();
    let mut coeffs: Vec<Vec<DMatrix<f64>>> = (1..=steps)
        .map(|t| vec![DMatrix::zeros(0, 0); t])
        .collect();

    // one-step conditional form: E[φ(t)ΔW_s | ℱ_s] equals
    // E[E(φ(t)|ℱ_{s+1}) ΔW_s | ℱ_s] by the tower property, and the inner
    // projection is the previous sweep level; this keeps the target
    // variance O(1) in (t − s) instead of O((t−s)/Δt)
    let mut prev_proj: Vec<Vec<f64>> = vec![Vec::new(); steps + 1];
    let mut proj_out = vec![0.0; dim];
    for s in (0..steps).rev() {
        let node_basis = build_node_basis(bundle, s, &basis)?;
        let mut cur_proj: Vec<Vec<f64>> = vec![Vec::new(); steps + 1];
        for t in (s + 1)..=steps {
            // one-step-ahead conditional values of φ(t)
            let next_vals: Vec<Vec<f64>> = if t == s + 1 {
                (0..dim)
                    .map(|d| (0..paths).map(|i| samples[[i, t, d]]).collect())
                    .collect()
            } else {
                (0..dim)
                    .map(|d| {
                        (0..paths)
                            .map(|i| prev_proj[t][i * dim + d])
                            .collect()
                    })
                    .collect()
            };
            let proj_coef = node_basis.solve(&next_vals);
            let mut proj_here = vec![0.0; paths * dim];
            let mut q_targets: Vec<Vec<f64>> = vec![vec![0.0; paths]; dim];
            for path in 0..paths {
                node_basis.predict(&proj_coef, path, &mut proj_out);
                let dws = bundle.dw[[path, s]];
                for d in 0..dim {
                    proj_here[path * dim + d] = proj_out[d];
                    q_targets[d][path] = (next_vals[d][path] - proj_out[d]) * dws / dt;
                }
            }
            coeffs[t - 1][s] = node_basis.solve(&q_targets);
            cur_proj[t] = proj_here;
        }
        standardizers[s] = Some(node_basis.standardizer);
        prev_proj = cur_proj;
    }

    Ok(MartingaleKernel {
        dim,
        degree,
        mean,
        deterministic: false,
        basis,
        standardizers: standardizers.into_iter().map(|s| s.unwrap()).collect(),
        coeffs,
    })
}

/// Relative L² reconstruction error of `φ(t) ≈ Êφ(t) + Σ φ̂_v(s,t)ΔW_s`
/// over all paths and nodes (trapezoid in t).
pub fn reconstruction_error(
    kernel: &MartingaleKernel,
    samples: &Array3<f64>,
    bundle: &PathBundle,
) -> f64 {
    let paths = bundle.path_count();
    let steps = bundle.grid.step_count();
    let dim = kernel.dim;
    let dt = bundle.grid.dt();
    let weights = stats::trapezoid_weights(steps + 1, dt);

    // integral accumulators per (path, t, d)
    let mut acc = Array3::<f64>::zeros((paths, steps + 1, dim));
    if !kernel.deterministic {
        let mut row = vec![0.0; kernel.basis.len()];
        let mut stdf = vec![0.0; bundle.state_dim + 1];
        for s in 0..steps {
            for path in 0..paths {
                let feats = node_features(bundle, path, s);
                kernel.standardizers[s].apply_into(&feats, &mut stdf);
                kernel.basis.eval_into(&stdf, &mut row);
                let dws = bundle.dw[[path, s]];
                for t in (s + 1)..=steps {
                    let coef = &kernel.coeffs[t - 1][s];
                    for d in 0..dim {
                        let mut pred = 0.0;
                        for c in 0..row.len() {
                            pred += coef[(c, d)] * row[c];
                        }
                        acc[[path, t, d]] += pred * dws;
                    }
                }
            }
        }
    }

    let mut num = 0.0;
    let mut den = 0.0;
    for path in 0..paths {
        for t in 0..=steps {
            for d in 0..dim {
                let rec = kernel.mean[t][d] + acc[[path, t, d]];
                let err = samples[[path, t, d]] - rec;
                num += weights[t] * err * err;
                den += weights[t] * samples[[path, t, d]] * samples[[path, t, d]];
            }
        }
    }
    (num / den.max(1e-300)).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::TimeGrid;
    use crate::problem::{example33, AdmissibleControl};
    use crate::sim::simulate_state;

    fn bundle(paths: usize, steps: usize, seed: u64) -> PathBundle {
        let p = example33();
        let grid = TimeGrid::new(1.0, steps).unwrap();
        let u = AdmissibleControl::constant_in(&[0.0], &p.control_set, &grid).unwrap();
        simulate_state(&p, &u, &grid, paths, seed).unwrap()
    }

    #[test]
    fn deterministic_process_has_exactly_zero_kernel() {
        let b = bundle(256, 32, 4);
        let mut samples = Array3::<f64>::zeros((256, 33, 1));
        for path in 0..256 {
            for t in 0..=32 {
                samples[[path, t, 0]] = 1.0 + b.grid.node(t);
            }
        }
        let kernel = martingale_representation(&samples, &b, 2).unwrap();
        assert!(kernel.deterministic);
        assert_eq!(kernel.value(&b, 7, 3, 20)[0], 0.0);
        assert_eq!(reconstruction_error(&kernel, &samples, &b), 0.0);
    }

    #[test]
    fn brownian_kernel_is_close_to_one() {
        let b = bundle(40000, 32, 9);
        let mut samples = Array3::<f64>::zeros((40000, 33, 1));
        for path in 0..40000 {
            for t in 0..=32 {
                samples[[path, t, 0]] = b.w[[path, t]];
            }
        }
        let kernel = martingale_representation(&samples, &b, 2).unwrap();
        assert!(!kernel.deterministic);
        let mut vals = Vec::new();
        for path in (0..40000).step_by(149) {
            for (s, t) in [(3, 10), (8, 20), (15, 31)] {
                vals.push(kernel.value(&b, path, s, t)[0]);
            }
        }
        let m = stats::mean(&vals);
        assert!((m - 1.0).abs() < 0.1, "mean kernel {m}");
        let err = reconstruction_error(&kernel, &samples, &b);
        assert!(err < 2e-2, "reconstruction error {err}");
    }

    #[test]
    fn shape_mismatch_is_structural() {
        let b = bundle(16, 8, 1);
        let samples = Array3::<f64>::zeros((16, 5, 1));
        assert!(matches!(
            martingale_representation(&samples, &b, 2),
            Err(SclError::Structural(_))
        ));
    }
}
