//! Dense Cholesky factorization with an escalating diagonal jitter.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Escalation schedule for diagonal jitter, expressed relative to a scale
/// (the prior variance for kernel matrices).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JitterPolicy {
    pub start: f64,
    pub factor: f64,
    pub cap: f64,
}

impl Default for JitterPolicy {
    fn default() -> Self {
        Self {
            start: 1e-10,
            factor: 10.0,
            cap: 1e-6,
        }
    }
}

/// Lower-triangular factor `L` with `L Lᵀ = A + jitter·I`.
#[derive(Debug, Clone, PartialEq)]
pub struct CholeskyFactor {
    lower: DMatrix<f64>,
    jitter: f64,
}

impl CholeskyFactor {
    /// Factorizes `a`, first without jitter and then with the jitter
    /// schedule scaled by `scale`. Fails with `ConditioningFailure` once the
    /// cap is exceeded.
    pub fn with_jitter(a: &DMatrix<f64>, scale: f64, policy: JitterPolicy) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: a.ncols(),
            });
        }
        if n == 0 {
            return Ok(Self {
                lower: DMatrix::zeros(0, 0),
                jitter: 0.0,
            });
        }
        if let Ok(lower) = cholesky_strict(a, 0.0) {
            return Ok(Self { lower, jitter: 0.0 });
        }
        let cap = policy.cap * scale;
        let mut jitter = policy.start * scale;
        while jitter <= cap * (1.0 + 1e-12) {
            if let Ok(lower) = cholesky_strict(a, jitter) {
                return Ok(Self { lower, jitter });
            }
            jitter *= policy.factor;
        }
        Err(Error::ConditioningFailure {
            size: n,
            jitter_cap: cap,
        })
    }

    /// Factorizes `a + jitter·I` for a prescribed jitter.
    pub fn with_fixed_jitter(a: &DMatrix<f64>, jitter: f64) -> Result<Self> {
        let lower = cholesky_strict(a, jitter)?;
        Ok(Self { lower, jitter })
    }

    /// Factorizes without any jitter.
    pub fn exact(a: &DMatrix<f64>) -> Result<Self> {
        let lower = cholesky_strict(a, 0.0)?;
        Ok(Self { lower, jitter: 0.0 })
    }

    pub fn lower(&self) -> &DMatrix<f64> {
        &self.lower
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn dim(&self) -> usize {
        self.lower.nrows()
    }

    /// `L⁻¹ b`
    pub fn solve_lower(&self, b: &DVector<f64>) -> DVector<f64> {
        self.lower
            .solve_lower_triangular(b)
            .expect("cholesky factor has a positive diagonal")
    }

    /// `(L Lᵀ)⁻¹ b`, two triangular solves.
    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        let y = self.solve_lower(b);
        self.lower
            .tr_solve_lower_triangular(&y)
            .expect("cholesky factor has a positive diagonal")
    }

    /// `(L Lᵀ)⁻¹ B` column by column.
    pub fn solve_matrix(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let y = self
            .lower
            .solve_lower_triangular(b)
            .expect("cholesky factor has a positive diagonal");
        self.lower
            .tr_solve_lower_triangular(&y)
            .expect("cholesky factor has a positive diagonal")
    }

    /// `bᵀ (L Lᵀ)⁻¹ b = ‖L⁻¹ b‖²`
    pub fn quad_form(&self, b: &DVector<f64>) -> f64 {
        self.solve_lower(b).norm_squared()
    }
}

/// Plain Cholesky of `a + jitter·I`. A pivot at or below `n·ε·max|diag|`
/// is treated as a failure: the matrix is numerically rank deficient.
fn cholesky_strict(a: &DMatrix<f64>, jitter: f64) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    let max_diag = (0..n).map(|i| a[(i, i)].abs()).fold(0.0_f64, f64::max) + jitter;
    let floor = n as f64 * f64::EPSILON * max_diag;
    let mut l = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        let mut d = a[(j, j)] + jitter;
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if !(d > floor) {
            return Err(Error::NotPositiveDefinite { pivot: j, value: d });
        }
        let djj = d.sqrt();
        l[(j, j)] = djj;
        for i in (j + 1)..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / djj;
        }
    }
    Ok(l)
}
