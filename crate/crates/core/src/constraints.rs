//! Boundedness, monotonicity and convexity as linear inequality systems on
//! knot values.
//!
//! For piecewise-linear functions each family is characterised exactly by
//! its knot values: extrema sit at knots, slopes are constant per cell and
//! convexity reduces to non-decreasing slopes across cells.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::partition::{project, CoefVector, Partition};

fn neg_inf() -> f64 {
    f64::NEG_INFINITY
}

fn pos_inf() -> f64 {
    f64::INFINITY
}

/// One convex shape family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ConstraintSpec {
    /// `a ≤ f ≤ b`; either side may be infinite.
    Bounds {
        #[serde(default = "neg_inf")]
        a: f64,
        #[serde(default = "pos_inf")]
        b: f64,
    },
    #[serde(alias = "non_decreasing")]
    Monotone,
    Convex,
    None,
}

impl ConstraintSpec {
    pub fn bounds(a: f64, b: f64) -> Result<Self> {
        let s = ConstraintSpec::Bounds { a, b };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if let ConstraintSpec::Bounds { a, b } = *self {
            if a.is_nan() || b.is_nan() || !(a < b) {
                return Err(Error::InvalidInput(format!(
                    "bounds need a < b, got a = {a}, b = {b}"
                )));
            }
        }
        Ok(())
    }

    /// Pointwise membership test for a function sampled on a grid.
    pub fn holds_on_samples(&self, xs: &[f64], ys: &[f64], tol: f64) -> bool {
        match *self {
            ConstraintSpec::Bounds { a, b } => ys.iter().all(|&y| y >= a - tol && y <= b + tol),
            ConstraintSpec::Monotone => ys.windows(2).all(|w| w[1] >= w[0] - tol),
            ConstraintSpec::Convex => xs.windows(3).zip(ys.windows(3)).all(|(x, y)| {
                let left = (y[1] - y[0]) / (x[1] - x[0]);
                let right = (y[2] - y[1]) / (x[2] - x[1]);
                right >= left - tol
            }),
            ConstraintSpec::None => true,
        }
    }
}

/// One sparse row `lower ≤ Σ coeff·c_j ≤ upper`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConstraintRow {
    pub coeffs: Vec<(usize, f64)>,
    pub lower: f64,
    pub upper: f64,
}

impl ConstraintRow {
    pub fn apply(&self, c: &[f64]) -> f64 {
        self.coeffs.iter().map(|&(j, g)| g * c[j]).sum()
    }

    /// Amount by which `value` falls outside `[lower, upper]`, zero inside.
    pub fn violation(&self, value: f64) -> f64 {
        (self.lower - value).max(value - self.upper).max(0.0)
    }
}

/// `lower ≤ G c ≤ upper` with `G` stored by sparse rows.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LinearInequalitySystem {
    dim: usize,
    rows: Vec<ConstraintRow>,
}

impl LinearInequalitySystem {
    pub fn empty(dim: usize) -> Self {
        Self {
            dim,
            rows: Vec::new(),
        }
    }

    pub fn from_rows(dim: usize, rows: Vec<ConstraintRow>) -> Result<Self> {
        for r in &rows {
            if let Some(&(j, _)) = r.coeffs.iter().find(|(j, _)| *j >= dim) {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: j + 1,
                });
            }
        }
        Ok(Self { dim, rows })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rows(&self) -> &[ConstraintRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Intersection of two systems on the same coordinates.
    pub fn concat(mut self, other: LinearInequalitySystem) -> Result<Self> {
        if other.dim != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: other.dim,
            });
        }
        self.rows.extend(other.rows);
        Ok(self)
    }

    /// Largest row violation of `c`.
    pub fn max_violation(&self, c: &[f64]) -> Result<f64> {
        self.check_dim(c.len())?;
        Ok(self
            .rows
            .iter()
            .map(|r| r.violation(r.apply(c)))
            .fold(0.0, f64::max))
    }

    /// Smallest distance of `G c` to a finite bound, over all rows.
    pub fn min_slack(&self, c: &[f64]) -> Option<f64> {
        self.rows
            .iter()
            .flat_map(|r| {
                let v = r.apply(c);
                [v - r.lower, r.upper - v]
            })
            .filter(|s| s.is_finite())
            .min_by(|a, b| a.partial_cmp(b).unwrap())
    }

    pub fn is_feasible(&self, c: &[f64], tol: f64) -> Result<bool> {
        self.check_dim(c.len())?;
        Ok(self.rows.iter().all(|r| {
            let v = r.apply(c);
            v >= r.lower - tol && v <= r.upper + tol
        }))
    }

    /// Indices of rows that involve coordinate `j`, for every `j`.
    pub fn rows_by_coordinate(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.dim];
        for (i, r) in self.rows.iter().enumerate() {
            for &(j, _) in &r.coeffs {
                out[j].push(i);
            }
        }
        out
    }

    fn check_dim(&self, n: usize) -> Result<()> {
        if n != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: n,
            });
        }
        Ok(())
    }
}

/// Encodes one family on the knots of `p`.
pub fn encode(spec: &ConstraintSpec, p: &Partition) -> LinearInequalitySystem {
    let t = p.knots();
    let n = t.len();
    let rows = match *spec {
        ConstraintSpec::Bounds { a, b } => {
            if a == f64::NEG_INFINITY && b == f64::INFINITY {
                Vec::new()
            } else {
                (0..n)
                    .map(|j| ConstraintRow {
                        coeffs: vec![(j, 1.0)],
                        lower: a,
                        upper: b,
                    })
                    .collect()
            }
        }
        ConstraintSpec::Monotone => (0..n - 1)
            .map(|j| ConstraintRow {
                coeffs: vec![(j, -1.0), (j + 1, 1.0)],
                lower: 0.0,
                upper: f64::INFINITY,
            })
            .collect(),
        ConstraintSpec::Convex => (0..n.saturating_sub(2))
            .map(|j| {
                let h1 = t[j + 1] - t[j];
                let h2 = t[j + 2] - t[j + 1];
                ConstraintRow {
                    coeffs: vec![(j, 1.0 / h1), (j + 1, -1.0 / h1 - 1.0 / h2), (j + 2, 1.0 / h2)],
                    lower: 0.0,
                    upper: f64::INFINITY,
                }
            })
            .collect(),
        ConstraintSpec::None => Vec::new(),
    };
    LinearInequalitySystem { dim: n, rows }
}

/// Encodes the intersection of several families.
pub fn encode_all(specs: &[ConstraintSpec], p: &Partition) -> LinearInequalitySystem {
    specs.iter().fold(LinearInequalitySystem::empty(p.len()), |acc, s| {
        acc.concat(encode(s, p)).expect("same partition")
    })
}

pub fn is_feasible(sys: &LinearInequalitySystem, c: &CoefVector, tol: f64) -> Result<bool> {
    sys.is_feasible(c.values(), tol)
}

/// A function of the family together with a label for reporting.
pub struct NamedFunction<'a> {
    pub name: String,
    pub f: Box<dyn Fn(f64) -> f64 + Sync + 'a>,
}

impl<'a> NamedFunction<'a> {
    pub fn new(name: impl Into<String>, f: impl Fn(f64) -> f64 + Sync + 'a) -> Self {
        Self {
            name: name.into(),
            f: Box::new(f),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct H2Violation {
    pub function: String,
    pub n_cells: usize,
    pub max_violation: f64,
}

/// Outcome of checking that interpolation at the knots preserves the
/// constraint family.
#[derive(Debug, Clone, PartialEq, Serialize, Default)]
pub struct H2Report {
    pub checks: usize,
    pub violations: Vec<H2Violation>,
}

impl H2Report {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

/// For each function and partition, projects onto the knots and checks the
/// encoded system with absolute tolerance `1e-12`.
pub fn check_h2(spec: &ConstraintSpec, functions: &[NamedFunction<'_>], ladder: &[Partition]) -> H2Report {
    const TOL: f64 = 1e-12;
    let mut report = H2Report::default();
    for p in ladder {
        let sys = encode(spec, p);
        let p = Arc::new(p.clone());
        for nf in functions {
            let c = project(&nf.f, &p);
            let v = sys
                .max_violation(c.values())
                .expect("projection has one value per knot");
            report.checks += 1;
            if v > TOL {
                report.violations.push(H2Violation {
                    function: nf.name.clone(),
                    n_cells: p.n_cells(),
                    max_violation: v,
                });
            }
        }
    }
    report
}
