//! Nested knot partitions of `[0, 1]`, the hat-function basis on them and
//! piecewise-linear functions expressed by their knot values.

use std::sync::Arc;

use nalgebra::DVector;
use serde::{Serialize, Serializer};

use crate::error::{Error, Result};

/// Two knots closer than this are considered the same knot.
pub const KNOT_TOLERANCE: f64 = 1e-12;

/// Strictly increasing knots `0 = t_0 < … < t_N = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    knots: Vec<f64>,
    level: usize,
}

impl Serialize for Partition {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        self.knots.serialize(serializer)
    }
}

impl Partition {
    /// Knots `{j / n_cells}`.
    pub fn uniform(n_cells: usize) -> Result<Self> {
        if n_cells == 0 {
            return Err(Error::InvalidInput("n_cells must be at least 1".into()));
        }
        let knots = (0..=n_cells)
            .map(|j| j as f64 / n_cells as f64)
            .collect();
        Ok(Self { knots, level: 0 })
    }

    /// Builds a partition from arbitrary knots, validating the invariants.
    pub fn from_knots(knots: Vec<f64>) -> Result<Self> {
        if knots.len() < 2 || knots[0] != 0.0 || *knots.last().unwrap() != 1.0 {
            return Err(Error::InvalidInput(
                "partition needs at least two knots with endpoints 0 and 1".into(),
            ));
        }
        for w in knots.windows(2) {
            if !(w[1] - w[0] > KNOT_TOLERANCE) {
                return Err(Error::DuplicateKnot {
                    knot: w[1],
                    tol: KNOT_TOLERANCE,
                });
            }
        }
        Ok(Self { knots, level: 0 })
    }

    /// Adds `extra` to the knot set. Every old knot is kept.
    pub fn refine(&self, extra: &[f64]) -> Result<Self> {
        let mut added: Vec<f64> = Vec::with_capacity(extra.len());
        for &x in extra {
            if !(x > 0.0 && x < 1.0) {
                return Err(Error::OutOfDomain { x });
            }
            let clash = self
                .nearest_knot(x)
                .map(|j| (self.knots[j] - x).abs() <= KNOT_TOLERANCE)
                .unwrap_or(false)
                || added.iter().any(|&a| (a - x).abs() <= KNOT_TOLERANCE);
            if clash {
                return Err(Error::DuplicateKnot {
                    knot: x,
                    tol: KNOT_TOLERANCE,
                });
            }
            added.push(x);
        }
        let mut knots = self.knots.clone();
        knots.extend(added);
        knots.sort_by(|a, b| a.partial_cmp(b).expect("knots are finite"));
        Ok(Self {
            knots,
            level: self.level + 1,
        })
    }

    /// Inserts the midpoint of every cell.
    pub fn refine_dyadic(&self) -> Self {
        let mids: Vec<f64> = self
            .knots
            .windows(2)
            .map(|w| 0.5 * (w[0] + w[1]))
            .collect();
        self.refine(&mids)
            .expect("midpoints of a valid partition are interior and new")
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn level(&self) -> usize {
        self.level
    }

    /// Number of cells `N`; there are `N + 1` knots.
    pub fn n_cells(&self) -> usize {
        self.knots.len() - 1
    }

    pub fn len(&self) -> usize {
        self.knots.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Largest gap between consecutive knots.
    pub fn mesh(&self) -> f64 {
        self.knots
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(0.0, f64::max)
    }

    /// Index `j` of the cell `[t_j, t_{j+1})` containing `x`; `x = 1` falls in
    /// the last cell.
    pub fn cell(&self, x: f64) -> usize {
        let upper = self.knots.partition_point(|&t| t <= x);
        upper.saturating_sub(1).min(self.n_cells() - 1)
    }

    pub fn nearest_knot(&self, x: f64) -> Option<usize> {
        let j = self.cell(x.clamp(0.0, 1.0));
        let (a, b) = (self.knots[j], self.knots[j + 1]);
        Some(if (x - a).abs() <= (b - x).abs() { j } else { j + 1 })
    }

    /// Index of a knot equal to `x` within [`KNOT_TOLERANCE`].
    pub fn index_of(&self, x: f64) -> Option<usize> {
        self.nearest_knot(x)
            .filter(|&j| (self.knots[j] - x).abs() <= KNOT_TOLERANCE)
    }

    /// True when every knot of `self` is also a knot of `finer`.
    pub fn is_nested_in(&self, finer: &Partition) -> bool {
        self.knots.iter().all(|&t| finer.index_of(t).is_some())
    }

    /// Value at `x` of the hat function centred on knot `j`.
    pub fn hat(&self, j: usize, x: f64) -> f64 {
        let i = self.cell(x);
        let (a, b) = (self.knots[i], self.knots[i + 1]);
        if j == i {
            (b - x) / (b - a)
        } else if j == i + 1 {
            (x - a) / (b - a)
        } else {
            0.0
        }
    }

    /// Nested ladder obtained by `steps` dyadic refinements of `self`.
    pub fn dyadic_ladder(&self, steps: usize) -> Vec<Partition> {
        let mut out = vec![self.clone()];
        for _ in 0..steps {
            let next = out.last().unwrap().refine_dyadic();
            out.push(next);
        }
        out
    }
}

/// Convenience wrapper for [`Partition::uniform`].
pub fn uniform_partition(n_cells: usize) -> Result<Partition> {
    Partition::uniform(n_cells)
}

/// Value of hat `j` of partition `p` at `x`.
pub fn hat_evaluate(p: &Partition, j: usize, x: f64) -> f64 {
    p.hat(j, x)
}

/// A continuous piecewise-linear function given by its values at the knots
/// (its coordinates in the hat basis).
#[derive(Debug, Clone, PartialEq)]
pub struct CoefVector {
    partition: Arc<Partition>,
    values: Vec<f64>,
}

impl CoefVector {
    pub fn new(partition: Arc<Partition>, values: Vec<f64>) -> Result<Self> {
        if values.len() != partition.len() {
            return Err(Error::DimensionMismatch {
                expected: partition.len(),
                found: values.len(),
            });
        }
        Ok(Self { partition, values })
    }

    pub fn partition(&self) -> &Arc<Partition> {
        &self.partition
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn to_dvector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.values)
    }

    /// `Σ_j c_j φ_j(x)`
    pub fn evaluate(&self, x: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&x) {
            return Err(Error::OutOfDomain { x });
        }
        let knots = self.partition.knots();
        let i = self.partition.cell(x);
        let (a, b) = (knots[i], knots[i + 1]);
        let (ca, cb) = (self.values[i], self.values[i + 1]);
        if x == b {
            return Ok(cb);
        }
        Ok(ca + (cb - ca) * ((x - a) / (b - a)))
    }

    /// Evaluates on every point of `grid`.
    pub fn evaluate_many(&self, grid: &[f64]) -> Result<Vec<f64>> {
        grid.iter().map(|&x| self.evaluate(x)).collect()
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// `evaluate_pl(c, x)`
pub fn evaluate_pl(c: &CoefVector, x: f64) -> Result<f64> {
    c.evaluate(x)
}

/// Interpolation operator `π_N`: knot values of `f`.
pub fn project<F: Fn(f64) -> f64>(f: F, p: &Arc<Partition>) -> CoefVector {
    let values = p.knots().iter().map(|&t| f(t)).collect();
    CoefVector {
        partition: Arc::clone(p),
        values,
    }
}

/// `n` equispaced points covering `[0, 1]` (both ends included).
pub fn uniform_grid(n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![0.0],
        _ => (0..n).map(|i| i as f64 / (n - 1) as f64).collect(),
    }
}
