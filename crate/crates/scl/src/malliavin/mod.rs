//! Malliavin-derivative plug-ins and the machinery built on them.
//!
//! Derivative kernels are analytic plug-ins, never automatic
//! differentiation: the regularity data `𝔻_s φ(t)` and the diagonal
//! `∇φ(t)` must be supplied for each process of interest. Adapted
//! processes have `𝔻_s φ(t) = 0` for `s > t`; the contract fixes the
//! backward derivative to zero and flags any nonzero supply.

mod clark_ocone;
mod counterexample;
mod martingale;
mod window;

pub use clark_ocone::{clark_ocone_check, ClarkOconeReport, TerminalFunctional};
pub use counterexample::{
    counterexample_ratio, osc_theta_coarse, osc_theta_fine, Counterexample, RatioPoint,
    OSC_LIMIT_COARSE, OSC_LIMIT_FINE,
};
pub use martingale::{
    martingale_representation, reconstruction_error, KernelSource, MartingaleKernel,
};
pub use window::{limit_kernel_check, window_diagonal_check, LimitKernelEstimate, WindowEstimate};

use std::sync::Arc;

use nalgebra::DMatrix;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, SclError};
use crate::grid::TimeGrid;
use crate::sim::PathBundle;

/// Per-path view handed to plug-in kernels.
pub struct PluginPath<'a> {
    pub grid: &'a TimeGrid,
    /// Brownian values at every grid node.
    pub w: &'a [f64],
    /// Nominal state row, node-major, when a problem context exists.
    pub state: Option<ndarray::ArrayView2<'a, f64>>,
}

pub fn plugin_path(bundle: &PathBundle, path: usize) -> PluginPath<'_> {
    PluginPath {
        grid: &bundle.grid,
        w: bundle
            .w
            .row(path)
            .to_slice()
            .expect("contiguous w row"),
        state: Some(bundle.state.index_axis(ndarray::Axis(0), path)),
    }
}

type KernelFn = Arc<dyn Fn(usize, usize, &PluginPath) -> DMatrix<f64> + Send + Sync>;
type DiagonalFn = Arc<dyn Fn(usize, &PluginPath) -> DMatrix<f64> + Send + Sync>;

/// Analytic Malliavin data for one matrix-valued process.
#[derive(Clone)]
pub struct MalliavinPlugin {
    pub label: String,
    pub rows: usize,
    pub cols: usize,
    kernel: KernelFn,
    diagonal: DiagonalFn,
}

impl MalliavinPlugin {
    pub fn new(
        label: impl Into<String>,
        rows: usize,
        cols: usize,
        kernel: KernelFn,
        diagonal: DiagonalFn,
    ) -> Self {
        MalliavinPlugin {
            label: label.into(),
            rows,
            cols,
            kernel,
            diagonal,
        }
    }

    /// Plug-in for a process with vanishing Malliavin derivative
    /// (deterministic processes in particular).
    pub fn zero(label: impl Into<String>, rows: usize, cols: usize) -> Self {
        MalliavinPlugin {
            label: label.into(),
            rows,
            cols,
            kernel: Arc::new(move |_, _, _| DMatrix::zeros(rows, cols)),
            diagonal: Arc::new(move |_, _| DMatrix::zeros(rows, cols)),
        }
    }

    /// `𝔻_s φ(t)` at grid nodes; zero for `s > t` by the adapted-process
    /// contract regardless of the user kernel.
    pub fn kernel_at(&self, s_node: usize, t_node: usize, path: &PluginPath) -> DMatrix<f64> {
        if s_node > t_node {
            return DMatrix::zeros(self.rows, self.cols);
        }
        (self.kernel)(s_node, t_node, path)
    }

    /// Diagonal derivative `∇φ(t)`.
    pub fn diagonal_at(&self, t_node: usize, path: &PluginPath) -> DMatrix<f64> {
        (self.diagonal)(t_node, path)
    }

    /// Probe the raw kernel strictly above the diagonal: any nonzero
    /// backward derivative violates adaptedness.
    pub fn check_adaptedness(&self, bundle: &PathBundle, probes: usize, seed: u64) -> Result<()> {
        let steps = bundle.grid.step_count();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..probes {
            let t_node = rng.gen_range(0..steps);
            let s_node = rng.gen_range(t_node + 1..=steps);
            let path_idx = rng.gen_range(0..bundle.path_count());
            let path = plugin_path(bundle, path_idx);
            let raw = (self.kernel)(s_node, t_node, &path);
            if raw.norm() > 1e-12 {
                return Err(SclError::structural(format!(
                    "plugin '{}' supplies a nonzero backward derivative at s={} > t={}",
                    self.label, s_node, t_node
                )));
            }
        }
        Ok(())
    }
}

/// `φ(t) = W(t)`: kernel ≡ 1 below the diagonal, diagonal ≡ 1.
pub fn brownian_plugin() -> MalliavinPlugin {
    MalliavinPlugin::new(
        "brownian",
        1,
        1,
        Arc::new(|s, t, _: &PluginPath| {
            DMatrix::from_row_slice(1, 1, &[if s <= t { 1.0 } else { 0.0 }])
        }),
        Arc::new(|_, _| DMatrix::from_row_slice(1, 1, &[1.0])),
    )
}

/// `φ(t) = W(t)²`: kernel `2W(t)`, diagonal `2W(t)`.
pub fn brownian_squared_plugin() -> MalliavinPlugin {
    MalliavinPlugin::new(
        "brownian_squared",
        1,
        1,
        Arc::new(|s, t, path: &PluginPath| {
            DMatrix::from_row_slice(1, 1, &[if s <= t { 2.0 * path.w[t] } else { 0.0 }])
        }),
        Arc::new(|t, path: &PluginPath| DMatrix::from_row_slice(1, 1, &[2.0 * path.w[t]])),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{example33, AdmissibleControl};
    use crate::sim::simulate_state;

    fn small_bundle() -> PathBundle {
        let p = example33();
        let grid = TimeGrid::new(1.0, 32).unwrap();
        let u = AdmissibleControl::constant_in(&[0.0], &p.control_set, &grid).unwrap();
        simulate_state(&p, &u, &grid, 16, 42).unwrap()
    }

    #[test]
    fn adapted_plugins_pass_probes() {
        let bundle = small_bundle();
        for plugin in [brownian_plugin(), brownian_squared_plugin()] {
            plugin.check_adaptedness(&bundle, 64, 7).unwrap();
        }
    }

    #[test]
    fn backward_derivative_supply_is_flagged() {
        let bundle = small_bundle();
        let bad = MalliavinPlugin::new(
            "anticipating",
            1,
            1,
            Arc::new(|_, _, _| DMatrix::from_row_slice(1, 1, &[1.0])),
            Arc::new(|_, _| DMatrix::zeros(1, 1)),
        );
        assert!(bad.check_adaptedness(&bundle, 64, 7).is_err());
    }

    #[test]
    fn kernel_access_zeroes_above_diagonal() {
        let bundle = small_bundle();
        let path = plugin_path(&bundle, 0);
        let plugin = brownian_plugin();
        assert_eq!(plugin.kernel_at(10, 5, &path)[(0, 0)], 0.0);
        assert_eq!(plugin.kernel_at(5, 10, &path)[(0, 0)], 1.0);
    }
}
