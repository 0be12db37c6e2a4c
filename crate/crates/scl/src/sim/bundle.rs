//! Simulated path storage and the binary bundle cache.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DVector;
use ndarray::{Array2, Array3};

use crate::error::{Result, SclError};
use crate::grid::TimeGrid;
use crate::problem::AdmissibleControl;

const CACHE_MAGIC: &[u8; 8] = b"SCLBNDL\0";
const CACHE_VERSION: u32 = 1;

/// Brownian increments plus the states they generated, with the control
/// that drove the simulation attached for downstream evaluations.
#[derive(Clone)]
pub struct PathBundle {
    pub grid: TimeGrid,
    pub state_dim: usize,
    pub control_dim: usize,
    pub seed: u64,
    /// P×N increments ΔW.
    pub dw: Array2<f64>,
    /// P×(N+1) cumulative Brownian values, W(t₀) = 0.
    pub w: Array2<f64>,
    /// P×(N+1)×n states.
    pub state: Array3<f64>,
    pub control: AdmissibleControl,
}

impl PathBundle {
    pub fn path_count(&self) -> usize {
        self.dw.shape()[0]
    }

    pub fn state_vec(&self, path: usize, node: usize) -> DVector<f64> {
        DVector::from_iterator(
            self.state_dim,
            self.state.slice(ndarray::s![path, node, ..]).iter().copied(),
        )
    }

    pub fn control_vec(&self, path: usize, node: usize) -> DVector<f64> {
        self.control.value(path, node, self.grid.node(node))
    }

    /// Brownian values W(t₀..=t_node) along one path.
    pub fn w_prefix(&self, path: usize, node: usize) -> &[f64] {
        let row = self.w.row(path);
        let slice = row.to_slice().expect("w rows are contiguous");
        &slice[..=node]
    }

    pub fn w_at(&self, path: usize, node: usize) -> f64 {
        self.w[[path, node]]
    }

    /// Sanity check on the increments: empirical mean within
    /// `4·σ/√(P·N)` of zero and the initial state exactly `x₀`.
    pub fn check_invariants(&self, x0: &DVector<f64>) -> Result<()> {
        let sigma = self.grid.dt().sqrt();
        let count = (self.dw.len()) as f64;
        let mean = self.dw.iter().sum::<f64>() / count;
        let bound = 4.0 * sigma / count.sqrt();
        if mean.abs() >= bound {
            return Err(SclError::structural(format!(
                "increment mean {mean:.3e} exceeds the 4-sigma bound {bound:.3e}"
            )));
        }
        for p in 0..self.path_count() {
            for i in 0..self.state_dim {
                if self.state[[p, 0, i]] != x0[i] {
                    return Err(SclError::structural(format!(
                        "path {p} does not start at x0 in component {i}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Write increments and states to a binary cache file.
    ///
    /// Header: magic, version, n, m, N, P, seed; payload: ΔW then states,
    /// little-endian f64 in row-major order. The control is not stored and
    /// must be re-attached on load.
    pub fn save_cache(&self, path: &Path) -> Result<()> {
        let mut file = std::fs::File::create(path)?;
        file.write_all(CACHE_MAGIC)?;
        file.write_all(&CACHE_VERSION.to_le_bytes())?;
        file.write_all(&(self.state_dim as u32).to_le_bytes())?;
        file.write_all(&(self.control_dim as u32).to_le_bytes())?;
        file.write_all(&(self.grid.step_count() as u64).to_le_bytes())?;
        file.write_all(&(self.path_count() as u64).to_le_bytes())?;
        file.write_all(&self.seed.to_le_bytes())?;
        file.write_all(&self.grid.horizon().to_le_bytes())?;
        let mut buf = Vec::with_capacity(8 * 1024);
        for chunk in [self.dw.as_slice().unwrap(), self.state.as_slice().unwrap()] {
            for v in chunk {
                buf.extend_from_slice(&v.to_le_bytes());
                if buf.len() >= 8 * 1024 {
                    file.write_all(&buf)?;
                    buf.clear();
                }
            }
            if !buf.is_empty() {
                file.write_all(&buf)?;
                buf.clear();
            }
        }
        Ok(())
    }

    /// Load a cache file written by [`PathBundle::save_cache`].
    pub fn load_cache(path: &Path, control: AdmissibleControl) -> Result<PathBundle> {
        let mut file = std::fs::File::open(path)?;
        let mut magic = [0u8; 8];
        file.read_exact(&mut magic)?;
        if &magic != CACHE_MAGIC {
            return Err(SclError::structural("not a bundle cache file"));
        }
        let mut u32buf = [0u8; 4];
        file.read_exact(&mut u32buf)?;
        let version = u32::from_le_bytes(u32buf);
        if version != CACHE_VERSION {
            return Err(SclError::structural(format!(
                "unsupported bundle cache version {version}"
            )));
        }
        file.read_exact(&mut u32buf)?;
        let n = u32::from_le_bytes(u32buf) as usize;
        file.read_exact(&mut u32buf)?;
        let m = u32::from_le_bytes(u32buf) as usize;
        let mut u64buf = [0u8; 8];
        file.read_exact(&mut u64buf)?;
        let steps = u64::from_le_bytes(u64buf) as usize;
        file.read_exact(&mut u64buf)?;
        let paths = u64::from_le_bytes(u64buf) as usize;
        file.read_exact(&mut u64buf)?;
        let seed = u64::from_le_bytes(u64buf);
        file.read_exact(&mut u64buf)?;
        let horizon = f64::from_le_bytes(u64buf);
        let grid = TimeGrid::new(horizon, steps)?;

        let mut read_block = |len: usize| -> Result<Vec<f64>> {
            let mut bytes = vec![0u8; len * 8];
            file.read_exact(&mut bytes)?;
            Ok(bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect())
        };
        let dw_flat = read_block(paths * steps)?;
        let state_flat = read_block(paths * (steps + 1) * n)?;
        let dw = Array2::from_shape_vec((paths, steps), dw_flat)
            .map_err(|e| SclError::structural(e.to_string()))?;
        let state = Array3::from_shape_vec((paths, steps + 1, n), state_flat)
            .map_err(|e| SclError::structural(e.to_string()))?;
        let w = cumulative_w(&dw);
        Ok(PathBundle {
            grid,
            state_dim: n,
            control_dim: m,
            seed,
            dw,
            w,
            state,
            control,
        })
    }
}

/// Cumulative Brownian values from increments, `W(t₀) = 0`.
pub fn cumulative_w(dw: &Array2<f64>) -> Array2<f64> {
    let (paths, steps) = (dw.shape()[0], dw.shape()[1]);
    let mut w = Array2::zeros((paths, steps + 1));
    for p in 0..paths {
        let mut acc = 0.0;
        for k in 0..steps {
            acc += dw[[p, k]];
            w[[p, k + 1]] = acc;
        }
    }
    w
}
