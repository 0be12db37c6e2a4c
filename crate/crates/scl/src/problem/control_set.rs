//! Bounded convex control regions: boxes and V-polytopes.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SclError};

/// Membership tolerance used by admissibility checks.
pub const MEMBERSHIP_TOL: f64 = 1e-12;

/// Exact-projection polytope distance is limited to this many vertices.
const MAX_POLYTOPE_VERTICES: usize = 16;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub enum ControlSetKind {
    Box {
        lower: Vec<f64>,
        upper: Vec<f64>,
    },
    /// Convex hull of the listed vertices.
    Polytope {
        vertices: Vec<Vec<f64>>,
    },
}

/// Nonempty, bounded, convex control region with a finite probe grid.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ControlSet {
    pub kind: ControlSetKind,
    /// Finite certificate grid used by pointwise tests; every point lies in
    /// the set.
    pub sample_grid: Vec<Vec<f64>>,
}

impl ControlSet {
    /// Box `[lower, upper]` with the default grid (per-axis
    /// lower/midpoint/upper, cartesian product).
    pub fn boxed(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        let kind = ControlSetKind::Box { lower, upper };
        let mut set = ControlSet {
            sample_grid: Vec::new(),
            kind,
        };
        set.validate()?;
        set.sample_grid = set.default_grid()?;
        set.validate()?;
        Ok(set)
    }

    pub fn polytope(vertices: Vec<Vec<f64>>) -> Result<Self> {
        let kind = ControlSetKind::Polytope { vertices };
        let mut set = ControlSet {
            sample_grid: Vec::new(),
            kind,
        };
        set.validate()?;
        set.sample_grid = set.default_grid()?;
        set.validate()?;
        Ok(set)
    }

    pub fn with_grid(mut self, grid: Vec<Vec<f64>>) -> Result<Self> {
        self.sample_grid = grid;
        self.validate()?;
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        match &self.kind {
            ControlSetKind::Box { lower, .. } => lower.len(),
            ControlSetKind::Polytope { vertices } => {
                vertices.first().map(|v| v.len()).unwrap_or(0)
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        match &self.kind {
            ControlSetKind::Box { lower, upper } => {
                if lower.is_empty() || lower.len() != upper.len() {
                    return Err(SclError::structural("box bounds empty or of unequal length"));
                }
                for (lo, hi) in lower.iter().zip(upper) {
                    if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                        return Err(SclError::structural(
                            "box bounds must be finite with lower <= upper",
                        ));
                    }
                }
            }
            ControlSetKind::Polytope { vertices } => {
                if vertices.is_empty() {
                    return Err(SclError::structural("polytope needs at least one vertex"));
                }
                if vertices.len() > MAX_POLYTOPE_VERTICES {
                    return Err(SclError::structural(format!(
                        "polytope limited to {MAX_POLYTOPE_VERTICES} vertices for exact projection"
                    )));
                }
                let d = vertices[0].len();
                if d == 0 {
                    return Err(SclError::structural("polytope vertices must be nonempty"));
                }
                for v in vertices {
                    if v.len() != d || v.iter().any(|c| !c.is_finite()) {
                        return Err(SclError::structural(
                            "polytope vertices must share a dimension and be finite",
                        ));
                    }
                }
            }
        }
        for g in &self.sample_grid {
            if g.len() != self.dim() {
                return Err(SclError::structural("grid point of wrong dimension"));
            }
            let gv = DVector::from_column_slice(g);
            let d = self.distance(&gv);
            if d > MEMBERSHIP_TOL {
                return Err(SclError::structural(format!(
                    "grid point {g:?} lies outside the control set (distance {d:.3e})"
                )));
            }
        }
        Ok(())
    }

    pub fn contains(&self, v: &DVector<f64>, tol: f64) -> bool {
        self.distance(v) <= tol
    }

    /// Euclidean distance from `v` to the set (0 inside).
    pub fn distance(&self, v: &DVector<f64>) -> f64 {
        (v - self.project(v)).norm()
    }

    /// Euclidean projection onto the set.
    ///
    /// Boxes clamp coordinatewise. Polytopes minimize `‖Vλ − v‖` over the
    /// simplex by enumerating faces and solving the equality-constrained
    /// least-squares system on each; exact for the small vertex counts
    /// allowed here.
    pub fn project(&self, v: &DVector<f64>) -> DVector<f64> {
        match &self.kind {
            ControlSetKind::Box { lower, upper } => DVector::from_iterator(
                lower.len(),
                (0..lower.len()).map(|i| v[i].clamp(lower[i], upper[i])),
            ),
            ControlSetKind::Polytope { vertices } => {
                let d = vertices[0].len();
                let k = vertices.len();
                let mut best: Option<(f64, DVector<f64>)> = None;
                for mask in 1u32..(1 << k) {
                    let idx: Vec<usize> = (0..k).filter(|i| mask & (1 << i) != 0).collect();
                    let cols = idx.len();
                    let vmat = DMatrix::from_fn(d, cols, |r, c| vertices[idx[c]][r]);
                    // KKT system for min ‖V λ − v‖² s.t. Σλ = 1
                    let mut kkt = DMatrix::zeros(cols + 1, cols + 1);
                    kkt.view_mut((0, 0), (cols, cols))
                        .copy_from(&(vmat.transpose() * &vmat));
                    for c in 0..cols {
                        kkt[(c, cols)] = 1.0;
                        kkt[(cols, c)] = 1.0;
                    }
                    let mut rhs = DVector::zeros(cols + 1);
                    rhs.rows_mut(0, cols).copy_from(&(vmat.transpose() * v));
                    rhs[cols] = 1.0;
                    let svd = kkt.svd(true, true);
                    let sol = match svd.solve(&rhs, 1e-12) {
                        Ok(s) => s,
                        Err(_) => continue,
                    };
                    let lambda = sol.rows(0, cols).into_owned();
                    if lambda.iter().any(|&l| l < -1e-10) {
                        continue;
                    }
                    let point = &vmat * &lambda;
                    let dist = (&point - v).norm();
                    if best.as_ref().map(|(b, _)| dist < *b).unwrap_or(true) {
                        best = Some((dist, point));
                    }
                }
                best.map(|(_, p)| p)
                    .unwrap_or_else(|| DVector::from_column_slice(&vertices[0]))
            }
        }
    }

    /// Default probe grid: box corners plus per-axis midpoints (the
    /// 3-point-per-axis cartesian product); polytope vertices plus the
    /// centroid.
    pub fn default_grid(&self) -> Result<Vec<Vec<f64>>> {
        match &self.kind {
            ControlSetKind::Box { lower, upper } => {
                let m = lower.len();
                if m > 6 {
                    return Err(SclError::structural(
                        "default box grid limited to 6 control dimensions",
                    ));
                }
                let mut grid = Vec::new();
                let mut counter = vec![0usize; m];
                loop {
                    let point: Vec<f64> = (0..m)
                        .map(|i| match counter[i] {
                            0 => lower[i],
                            1 => 0.5 * (lower[i] + upper[i]),
                            _ => upper[i],
                        })
                        .collect();
                    grid.push(point);
                    let mut carry = 0;
                    loop {
                        counter[carry] += 1;
                        if counter[carry] < 3 {
                            break;
                        }
                        counter[carry] = 0;
                        carry += 1;
                        if carry == m {
                            return Ok(grid);
                        }
                    }
                }
            }
            ControlSetKind::Polytope { vertices } => {
                let mut grid = vertices.clone();
                let d = vertices[0].len();
                let k = vertices.len() as f64;
                let centroid: Vec<f64> = (0..d)
                    .map(|i| vertices.iter().map(|v| v[i]).sum::<f64>() / k)
                    .collect();
                grid.push(centroid);
                Ok(grid)
            }
        }
    }

    pub fn grid_vectors(&self) -> Vec<DVector<f64>> {
        self.sample_grid
            .iter()
            .map(|g| DVector::from_column_slice(g))
            .collect()
    }
}
