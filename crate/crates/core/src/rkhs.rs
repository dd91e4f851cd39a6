//! Finite-dimensional RKHS sections `H_N`: the norm `cᵀ Γ_N⁻¹ c`, its
//! behaviour along nested partitions, and the unconstrained kriging
//! interpolant.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{GramMatrix, Kernel};
use crate::linalg::CholeskyFactor;
use crate::partition::{project, CoefVector, Partition};

/// Noise-free interpolation data `y(x_i) = y_i` on `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignData {
    pub points: Vec<f64>,
    pub values: Vec<f64>,
}

impl DesignData {
    pub fn new(points: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        let d = Self { points, values };
        d.validate()?;
        Ok(d)
    }

    /// No observations; used for unconditional sampling.
    pub fn empty() -> Self {
        Self {
            points: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.points.len() != self.values.len() {
            return Err(Error::DimensionMismatch {
                expected: self.points.len(),
                found: self.values.len(),
            });
        }
        for (&x, &y) in self.points.iter().zip(&self.values) {
            if !(0.0..=1.0).contains(&x) {
                return Err(Error::OutOfDomain { x });
            }
            if !y.is_finite() {
                return Err(Error::InvalidInput(format!("non-finite value at x = {x}")));
            }
        }
        let mut sorted = self.points.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidInput("design points must be distinct".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// `‖h‖²_{H_N} = cᵀ Γ_N⁻¹ c`, through the cached Cholesky factor.
pub fn hn_norm_sq(c: &CoefVector, g: &GramMatrix) -> Result<f64> {
    if c.values().len() != g.dim() {
        return Err(Error::DimensionMismatch {
            expected: g.dim(),
            found: c.values().len(),
        });
    }
    Ok(g.quad_form(&c.to_dvector()))
}

/// `m_N(f) = ‖π_N f‖²_{H_N}` along a ladder of nested partitions.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RkhsNormSeq {
    pub n_cells: Vec<usize>,
    pub values: Vec<f64>,
    pub jitter: Vec<f64>,
}

impl RkhsNormSeq {
    /// Non-decreasing up to a relative slack.
    pub fn is_non_decreasing(&self, rel_tol: f64) -> bool {
        self.values
            .windows(2)
            .all(|w| w[1] >= w[0] - rel_tol * w[0].abs().max(w[1].abs()))
    }

    /// `m_{last} / m_{second to last}`; large ratios flag `f ∉ H`.
    pub fn tail_ratio(&self) -> Option<f64> {
        match self.values.as_slice() {
            [.., a, b] if *a > 0.0 => Some(b / a),
            _ => None,
        }
    }

    pub fn last(&self) -> Option<f64> {
        self.values.last().copied()
    }
}

/// Computes `m_N(f)` for each partition of a nested ladder.
///
/// All levels share the largest jitter any level needs, so every Gram
/// matrix is a principal submatrix of the next one and the sequence keeps
/// its monotonicity.
pub fn norm_ladder<F: Fn(f64) -> f64>(
    f: F,
    ladder: &[Partition],
    kernel: &Kernel,
) -> Result<RkhsNormSeq> {
    for w in ladder.windows(2) {
        if !w[0].is_nested_in(&w[1]) {
            return Err(Error::InvalidInput("ladder partitions are not nested".into()));
        }
    }
    let mut out = RkhsNormSeq {
        n_cells: Vec::with_capacity(ladder.len()),
        values: Vec::with_capacity(ladder.len()),
        jitter: Vec::with_capacity(ladder.len()),
    };
    let grams: Vec<GramMatrix> = ladder
        .iter()
        .map(|p| GramMatrix::new(kernel, p.knots()))
        .collect::<Result<_>>()?;
    let jitter = grams.iter().map(|g| g.jitter_applied()).fold(0.0, f64::max);
    for (p, g) in ladder.iter().zip(grams) {
        let p = Arc::new(p.clone());
        let g = if g.jitter_applied() < jitter {
            GramMatrix::with_fixed_jitter(kernel, p.knots(), jitter)?
        } else {
            g
        };
        let c = project(&f, &p);
        out.n_cells.push(p.n_cells());
        out.values.push(hn_norm_sq(&c, &g)?);
        out.jitter.push(g.jitter_applied());
    }
    Ok(out)
}

/// Unconstrained GP posterior mean `ŷ(x) = k(x)ᵀ K⁻¹ y`.
#[derive(Debug, Clone)]
pub struct KrigingModel {
    kernel: Kernel,
    points: Vec<f64>,
    weights: DVector<f64>,
}

impl KrigingModel {
    pub fn fit(data: &DesignData, kernel: &Kernel) -> Result<Self> {
        data.validate()?;
        if data.is_empty() {
            return Ok(Self {
                kernel: *kernel,
                points: Vec::new(),
                weights: DVector::zeros(0),
            });
        }
        let g = GramMatrix::new(kernel, &data.points)?;
        let weights = g.solve(&DVector::from_column_slice(&data.values));
        Ok(Self {
            kernel: *kernel,
            points: data.points.clone(),
            weights,
        })
    }

    pub fn predict(&self, x: f64) -> f64 {
        self.points
            .iter()
            .zip(self.weights.iter())
            .map(|(&p, &w)| self.kernel.evaluate(x, p) * w)
            .sum()
    }

    pub fn predict_many(&self, xs: &[f64]) -> Vec<f64> {
        xs.iter().map(|&x| self.predict(x)).collect()
    }
}

pub fn kriging_mean(data: &DesignData, kernel: &Kernel, x_query: &[f64]) -> Result<Vec<f64>> {
    Ok(KrigingModel::fit(data, kernel)?.predict_many(x_query))
}

/// Returns `(yᵀ B⁻¹ y, xᵀ A⁻¹ x)` where `A` is the leading principal block
/// of `B` of size `n − 1` and `x` the leading part of `y`.
pub fn check_block_lemma(b: &DMatrix<f64>, y: &DVector<f64>) -> Result<(f64, f64)> {
    let n = b.nrows();
    if b.ncols() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: b.ncols(),
        });
    }
    if y.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: y.len(),
        });
    }
    if n < 2 {
        return Err(Error::InvalidInput("block lemma needs n >= 2".into()));
    }
    let full = CholeskyFactor::exact(b)?;
    let a = b.view((0, 0), (n - 1, n - 1)).into_owned();
    let lead = CholeskyFactor::exact(&a)?;
    let x = y.rows(0, n - 1).into_owned();
    Ok((full.quad_form(y), lead.quad_form(&x)))
}

/// Constant `c` in `‖h‖_∞ ≤ c ‖h‖_{H_N}`, independent of `N`.
pub fn uniform_bound_constant(kernel: &Kernel) -> f64 {
    kernel.uniform_bound_constant()
}
