//! Control processes and admissibility.

use std::sync::Arc;

use nalgebra::DVector;
use ndarray::Array3;

use crate::error::{Result, SclError};
use crate::grid::TimeGrid;
use crate::problem::control_set::{ControlSet, MEMBERSHIP_TOL};

/// A control-space-valued process on the time grid.
///
/// `Sampled` carries one value per (path, node); adaptedness (node `k`
/// depending only on increments with index `< k`) holds by construction of
/// the producer and is not re-derivable from the samples.
#[derive(Clone)]
pub enum ControlProcess {
    Constant(DVector<f64>),
    Deterministic(Arc<dyn Fn(f64) -> DVector<f64> + Send + Sync>),
    /// P×(N+1)×m samples.
    Sampled(Arc<Array3<f64>>),
}

impl ControlProcess {
    pub fn constant(values: &[f64]) -> Self {
        ControlProcess::Constant(DVector::from_column_slice(values))
    }

    pub fn value(&self, path: usize, node: usize, t: f64) -> DVector<f64> {
        match self {
            ControlProcess::Constant(v) => v.clone(),
            ControlProcess::Deterministic(f) => f(t),
            ControlProcess::Sampled(arr) => {
                DVector::from_iterator(arr.shape()[2], arr.slice(ndarray::s![path, node, ..]).iter().copied())
            }
        }
    }

    pub fn is_deterministic(&self) -> bool {
        !matches!(self, ControlProcess::Sampled(_))
    }

    pub fn dim(&self) -> usize {
        match self {
            ControlProcess::Constant(v) => v.len(),
            ControlProcess::Deterministic(f) => f(0.0).len(),
            ControlProcess::Sampled(arr) => arr.shape()[2],
        }
    }
}

/// A control process validated against a control set.
#[derive(Clone)]
pub struct AdmissibleControl {
    pub process: ControlProcess,
}

impl AdmissibleControl {
    /// Validate membership: constants exactly, deterministic controls on a
    /// probe grid of times, sampled controls entrywise. The projection
    /// distance must stay below 1e-12.
    pub fn new(process: ControlProcess, set: &ControlSet, grid: &TimeGrid) -> Result<Self> {
        if process.dim() != set.dim() {
            return Err(SclError::structural(format!(
                "control has dimension {}, control set {}",
                process.dim(),
                set.dim()
            )));
        }
        match &process {
            ControlProcess::Constant(v) => {
                let d = set.distance(v);
                if d > MEMBERSHIP_TOL {
                    return Err(SclError::domain(format!(
                        "constant control outside the control set (distance {d:.3e})"
                    )));
                }
            }
            ControlProcess::Deterministic(f) => {
                for k in 0..=grid.step_count() {
                    let t = grid.node(k);
                    let v = f(t);
                    let d = set.distance(&v);
                    if d > MEMBERSHIP_TOL {
                        return Err(SclError::domain(format!(
                            "control value at t={t} outside the control set (distance {d:.3e})"
                        )));
                    }
                }
            }
            ControlProcess::Sampled(arr) => {
                let (paths, nodes, m) = (arr.shape()[0], arr.shape()[1], arr.shape()[2]);
                if nodes != grid.node_count() {
                    return Err(SclError::structural(format!(
                        "sampled control has {nodes} nodes, grid expects {}",
                        grid.node_count()
                    )));
                }
                for p in 0..paths {
                    for k in 0..nodes {
                        let v = DVector::from_iterator(
                            m,
                            arr.slice(ndarray::s![p, k, ..]).iter().copied(),
                        );
                        let d = set.distance(&v);
                        if d > MEMBERSHIP_TOL {
                            return Err(SclError::domain(format!(
                                "sampled control on path {p}, node {k} outside the control set (distance {d:.3e})"
                            )));
                        }
                    }
                }
            }
        }
        Ok(AdmissibleControl { process })
    }

    pub fn constant_in(values: &[f64], set: &ControlSet, grid: &TimeGrid) -> Result<Self> {
        AdmissibleControl::new(ControlProcess::constant(values), set, grid)
    }

    pub fn value(&self, path: usize, node: usize, t: f64) -> DVector<f64> {
        self.process.value(path, node, t)
    }

    pub fn is_deterministic(&self) -> bool {
        self.process.is_deterministic()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_box() -> ControlSet {
        ControlSet::boxed(vec![-1.0], vec![1.0]).unwrap()
    }

    #[test]
    fn constant_admissibility() {
        let set = unit_box();
        let grid = TimeGrid::new(1.0, 8).unwrap();
        assert!(AdmissibleControl::constant_in(&[0.5], &set, &grid).is_ok());
        assert!(AdmissibleControl::constant_in(&[1.5], &set, &grid).is_err());
    }

    #[test]
    fn deterministic_control_probed_on_grid() {
        let set = unit_box();
        let grid = TimeGrid::new(1.0, 8).unwrap();
        let ok = ControlProcess::Deterministic(Arc::new(|t: f64| {
            DVector::from_column_slice(&[t.min(1.0)])
        }));
        assert!(AdmissibleControl::new(ok, &set, &grid).is_ok());
        let bad = ControlProcess::Deterministic(Arc::new(|t: f64| {
            DVector::from_column_slice(&[2.0 * t])
        }));
        assert!(AdmissibleControl::new(bad, &set, &grid).is_err());
    }

    #[test]
    fn sampled_control_is_checked_entrywise() {
        let set = unit_box();
        let grid = TimeGrid::new(1.0, 3).unwrap();
        let mut arr = Array3::<f64>::zeros((2, 4, 1));
        arr[[1, 2, 0]] = 0.9;
        assert!(AdmissibleControl::new(
            ControlProcess::Sampled(Arc::new(arr.clone())),
            &set,
            &grid
        )
        .is_ok());
        arr[[0, 1, 0]] = 1.2;
        assert!(
            AdmissibleControl::new(ControlProcess::Sampled(Arc::new(arr)), &set, &grid).is_err()
        );
    }
}
