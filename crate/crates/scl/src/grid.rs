//! Uniform time grid on `[0, T]`.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SclError};

/// Uniform partition `t_k = k T / N`, `k = 0..=N`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    horizon: f64,
    step_count: usize,
}

impl TimeGrid {
    pub fn new(horizon: f64, step_count: usize) -> Result<Self> {
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(SclError::config("horizon must be a positive finite real"));
        }
        if step_count == 0 {
            return Err(SclError::config("step count must be positive"));
        }
        Ok(TimeGrid {
            horizon,
            step_count,
        })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    /// Number of steps N; the grid has N+1 nodes.
    pub fn step_count(&self) -> usize {
        self.step_count
    }

    pub fn node_count(&self) -> usize {
        self.step_count + 1
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.step_count as f64
    }

    pub fn node(&self, k: usize) -> f64 {
        if k == self.step_count {
            self.horizon
        } else {
            k as f64 * self.dt()
        }
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..=self.step_count).map(|k| self.node(k)).collect()
    }

    /// Index of the grid node nearest to `t` (clamped to the grid).
    pub fn nearest_node(&self, t: f64) -> usize {
        let k = (t / self.dt()).round();
        (k.max(0.0) as usize).min(self.step_count)
    }

    /// Snap a window `[tau, tau + theta)` to grid nodes.
    ///
    /// The start snaps to the nearest node and the width to the nearest
    /// number of steps, at least 2; the window must fit inside `[0, T]`.
    pub fn snap_window(&self, tau: f64, theta: f64) -> Result<(usize, usize)> {
        let start = self.nearest_node(tau);
        let steps = ((theta / self.dt()).round() as usize).max(2);
        if start + steps > self.step_count {
            return Err(SclError::domain(format!(
                "window [{tau}, {tau}+{theta}) does not fit inside [0, {}]",
                self.horizon
            )));
        }
        Ok((start, steps))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nodes_are_uniform_and_anchored() {
        let g = TimeGrid::new(1.0, 8).unwrap();
        assert_eq!(g.node(0), 0.0);
        assert_eq!(g.node(8), 1.0);
        let n = g.nodes();
        for k in 1..n.len() {
            assert!((n[k] - n[k - 1] - g.dt()).abs() < 1e-15);
        }
    }

    #[test]
    fn window_snaps_and_enforces_minimum_width() {
        let g = TimeGrid::new(1.0, 100).unwrap();
        let (start, steps) = g.snap_window(0.25, 0.004).unwrap();
        assert_eq!(start, 25);
        assert_eq!(steps, 2);
        assert!(g.snap_window(0.99, 0.1).is_err());
    }

    #[test]
    fn rejects_degenerate_grids() {
        assert!(TimeGrid::new(0.0, 4).is_err());
        assert!(TimeGrid::new(1.0, 0).is_err());
    }
}
