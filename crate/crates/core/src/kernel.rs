//! Stationary covariance functions and Gram matrices at knots.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{CholeskyFactor, JitterPolicy};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelFamily {
    /// `σ² exp(−(x−x′)²/(2θ²))`
    SquaredExponential,
    /// `σ² (1 + √5 r/θ + 5r²/(3θ²)) exp(−√5 r/θ)`
    Matern52,
}

/// A positive-definite stationary covariance function with standard
/// deviation `sigma` and length scale `theta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Kernel {
    pub family: KernelFamily,
    pub sigma: f64,
    pub theta: f64,
}

impl Kernel {
    pub fn new(family: KernelFamily, sigma: f64, theta: f64) -> Result<Self> {
        let k = Self {
            family,
            sigma,
            theta,
        };
        k.validate()?;
        Ok(k)
    }

    pub fn squared_exponential(sigma: f64, theta: f64) -> Result<Self> {
        Self::new(KernelFamily::SquaredExponential, sigma, theta)
    }

    pub fn matern52(sigma: f64, theta: f64) -> Result<Self> {
        Self::new(KernelFamily::Matern52, sigma, theta)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "kernel sigma must be positive, got {}",
                self.sigma
            )));
        }
        if !(self.theta > 0.0 && self.theta.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "kernel theta must be positive, got {}",
                self.theta
            )));
        }
        Ok(())
    }

    pub fn variance(&self) -> f64 {
        self.sigma * self.sigma
    }

    pub fn evaluate(&self, x: f64, x_prime: f64) -> f64 {
        // |x − x′| keeps the evaluation bitwise symmetric
        let r = (x - x_prime).abs();
        let s2 = self.variance();
        match self.family {
            KernelFamily::SquaredExponential => {
                let u = r / self.theta;
                s2 * (-0.5 * u * u).exp()
            }
            KernelFamily::Matern52 => {
                let u = 5.0_f64.sqrt() * r / self.theta;
                s2 * (1.0 + u + u * u / 3.0) * (-u).exp()
            }
        }
    }

    /// Pairwise kernel values between two point sets.
    pub fn cross(&self, xs: &[f64], ys: &[f64]) -> DMatrix<f64> {
        DMatrix::from_fn(xs.len(), ys.len(), |i, j| self.evaluate(xs[i], ys[j]))
    }

    /// Bound `sup |K(x,x′)|^{1/2}`, the constant relating sup-norm and
    /// H_N-norm. Equals `sigma` for both stationary families.
    pub fn uniform_bound_constant(&self) -> f64 {
        self.sigma
    }
}

/// Gram matrix `Γ = (K(t_k, t_l))` with its cached (possibly jittered)
/// Cholesky factor.
#[derive(Debug, Clone, PartialEq)]
pub struct GramMatrix {
    values: DMatrix<f64>,
    factor: CholeskyFactor,
}

impl GramMatrix {
    /// Assembles and factorizes the Gram matrix of `points` with the default
    /// jitter policy.
    pub fn new(kernel: &Kernel, points: &[f64]) -> Result<Self> {
        Self::with_policy(kernel, points, JitterPolicy::default())
    }

    pub fn with_policy(kernel: &Kernel, points: &[f64], policy: JitterPolicy) -> Result<Self> {
        let values = kernel.cross(points, points);
        let factor = CholeskyFactor::with_jitter(&values, kernel.variance(), policy)?;
        if factor.jitter() > 0.0 {
            log::debug!(
                "gram of size {} factorized with jitter {:e}",
                points.len(),
                factor.jitter()
            );
        }
        Ok(Self { values, factor })
    }

    /// Uses exactly `jitter` instead of the escalation schedule.
    pub fn with_fixed_jitter(kernel: &Kernel, points: &[f64], jitter: f64) -> Result<Self> {
        let values = kernel.cross(points, points);
        let factor = CholeskyFactor::with_fixed_jitter(&values, jitter)?;
        Ok(Self { values, factor })
    }

    pub fn dim(&self) -> usize {
        self.values.nrows()
    }

    /// Kernel values without jitter.
    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    /// The matrix actually factorized, `Γ + jitter·I`.
    pub fn jittered(&self) -> DMatrix<f64> {
        let mut m = self.values.clone();
        for i in 0..m.nrows() {
            m[(i, i)] += self.factor.jitter();
        }
        m
    }

    pub fn jitter_applied(&self) -> f64 {
        self.factor.jitter()
    }

    pub fn factor(&self) -> &CholeskyFactor {
        &self.factor
    }

    /// `Γ⁻¹ b` via the cached factor.
    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        self.factor.solve(b)
    }

    /// `bᵀ Γ⁻¹ b`
    pub fn quad_form(&self, b: &DVector<f64>) -> f64 {
        self.factor.quad_form(b)
    }
}

/// Gram matrix at the knots of a partition.
pub fn gram(kernel: &Kernel, knots: &crate::partition::Partition) -> Result<GramMatrix> {
    GramMatrix::new(kernel, knots.knots())
}
