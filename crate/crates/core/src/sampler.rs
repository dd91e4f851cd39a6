//! Draws from the constrained posterior of the knot values: Gaussian
//! conditioning on the interpolation data, then truncation to the
//! constraint polytope.
//!
//! Rejection sampling is exact and is used whenever a pilot run accepts at
//! least [`SamplerOptions::min_acceptance`] of the proposals. Otherwise a
//! coordinate-wise Gibbs sampler runs over the truncated Gaussian in
//! whitened coordinates, where each conditional is a standard normal
//! truncated to an interval.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use serde::Serialize;

use crate::constraints::LinearInequalitySystem;
use crate::error::{Error, Result};
use crate::linalg::{CholeskyFactor, JitterPolicy};
use crate::map::QpProblem;
use crate::partition::{CoefVector, Partition};
use crate::qp::{self, LinearConstraint, QpOptions, QpStatus};

/// Gaussian law of the free knot values given the data knots.
#[derive(Debug, Clone)]
pub struct ConditionalGaussian {
    partition: Arc<Partition>,
    /// Knot indices that are not data.
    pub free: Vec<usize>,
    /// `(knot index, value)` for the data knots.
    pub fixed: Vec<(usize, f64)>,
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
    factor: CholeskyFactor,
}

impl ConditionalGaussian {
    pub fn dim(&self) -> usize {
        self.free.len()
    }

    pub fn partition(&self) -> &Arc<Partition> {
        &self.partition
    }

    pub fn jitter(&self) -> f64 {
        self.factor.jitter()
    }

    /// Full knot vector from free coordinates.
    pub fn assemble(&self, free_values: &DVector<f64>) -> Vec<f64> {
        let mut c = vec![0.0; self.partition.len()];
        for (&k, &v) in self.free.iter().zip(free_values.iter()) {
            c[k] = v;
        }
        for &(k, y) in &self.fixed {
            c[k] = y;
        }
        c
    }

    /// Knot values of the conditional mean, data knots included.
    pub fn mean_knot_values(&self) -> Vec<f64> {
        self.assemble(&self.mean)
    }
}

/// Conditions the knot-value vector of the process on the equality block of
/// `qp`.
pub fn condition_on_data(qp: &QpProblem) -> Result<ConditionalGaussian> {
    let n = qp.dim();
    let gamma = qp.gram.values();
    let scale = (0..n).map(|i| gamma[(i, i)]).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let mut is_fixed = vec![false; n];
    for &k in &qp.eq_indices {
        is_fixed[k] = true;
    }
    let free: Vec<usize> = (0..n).filter(|&k| !is_fixed[k]).collect();
    let fixed: Vec<(usize, f64)> = qp
        .eq_indices
        .iter()
        .copied()
        .zip(qp.eq_values.iter().copied())
        .collect();

    let sub = |rows: &[usize], cols: &[usize]| {
        DMatrix::from_fn(rows.len(), cols.len(), |i, j| gamma[(rows[i], cols[j])])
    };
    let g_ff = sub(&free, &free);
    let (mean, mut covariance) = if qp.eq_indices.is_empty() {
        (DVector::zeros(free.len()), g_ff)
    } else {
        let g_fi = sub(&free, &qp.eq_indices);
        let g_ii = sub(&qp.eq_indices, &qp.eq_indices);
        let f_ii = CholeskyFactor::with_jitter(&g_ii, scale, JitterPolicy::default())?;
        let y = DVector::from_column_slice(&qp.eq_values);
        let mean = &g_fi * f_ii.solve(&y);
        let cov = g_ff - &g_fi * f_ii.solve_matrix(&g_fi.transpose());
        (mean, cov)
    };
    covariance = (&covariance + covariance.transpose()) * 0.5;
    let factor = CholeskyFactor::with_jitter(&covariance, scale, JitterPolicy::default())?;
    Ok(ConditionalGaussian {
        partition: Arc::clone(&qp.partition),
        free,
        fixed,
        mean,
        covariance,
        factor,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum SamplingMethod {
    Rejection,
    Gibbs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MethodChoice {
    /// Rejection when the pilot acceptance is high enough, Gibbs otherwise.
    Auto,
    Rejection,
    Gibbs,
}

#[derive(Debug, Clone)]
pub struct SamplerOptions {
    pub method: MethodChoice,
    pub pilot: usize,
    pub min_acceptance: f64,
    pub burn_in: usize,
    pub thin: usize,
    /// Rejection gives up and switches to Gibbs after this many proposals.
    pub max_proposals: usize,
}

impl Default for SamplerOptions {
    fn default() -> Self {
        Self {
            method: MethodChoice::Auto,
            pilot: 1000,
            min_acceptance: 0.01,
            burn_in: 1000,
            thin: 10,
            max_proposals: 5_000_000,
        }
    }
}

/// Feasible posterior draws with their provenance.
#[derive(Debug, Clone, Serialize)]
pub struct SampleBatch {
    #[serde(skip)]
    pub draws: Vec<CoefVector>,
    pub n_requested: usize,
    pub n_accepted: usize,
    pub n_proposed: usize,
    pub method: SamplingMethod,
    pub rng_seed: u64,
    /// Accepted / proposed for rejection; 1.0 for Gibbs.
    pub acceptance_rate: f64,
    pub burn_in: usize,
    pub thin: usize,
}

/// Draws `n_samples` knot vectors from the conditional Gaussian truncated
/// to `ineq`.
pub fn sample(
    cg: &ConditionalGaussian,
    ineq: &LinearInequalitySystem,
    n_samples: usize,
    seed: u64,
    opts: &SamplerOptions,
) -> Result<SampleBatch> {
    if n_samples == 0 {
        return Err(Error::InvalidInput("n_samples must be at least 1".into()));
    }
    if ineq.dim() != cg.partition.len() {
        return Err(Error::DimensionMismatch {
            expected: cg.partition.len(),
            found: ineq.dim(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    if ineq.is_empty() || opts.method == MethodChoice::Rejection || opts.method == MethodChoice::Auto {
        let pilot = if ineq.is_empty() || opts.method == MethodChoice::Rejection {
            None
        } else {
            Some(opts.pilot)
        };
        if let Some(batch) = rejection(cg, ineq, n_samples, seed, pilot, opts, &mut rng)? {
            return Ok(batch);
        }
        if opts.method == MethodChoice::Rejection {
            return Err(Error::InvalidInput(format!(
                "rejection sampling exceeded {} proposals",
                opts.max_proposals
            )));
        }
    }
    gibbs(cg, ineq, n_samples, seed, opts, &mut rng)
}

fn propose(cg: &ConditionalGaussian, rng: &mut ChaCha8Rng) -> DVector<f64> {
    let z = DVector::from_fn(cg.dim(), |_, _| StandardNormal.sample(rng));
    &cg.mean + cg.factor.lower() * z
}

/// `Ok(None)` means rejection was abandoned (pilot too poor or proposal
/// budget exhausted).
fn rejection(
    cg: &ConditionalGaussian,
    ineq: &LinearInequalitySystem,
    n_samples: usize,
    seed: u64,
    pilot: Option<usize>,
    opts: &SamplerOptions,
    rng: &mut ChaCha8Rng,
) -> Result<Option<SampleBatch>> {
    let mut draws = Vec::with_capacity(n_samples);
    let mut proposed = 0usize;
    let mut accepted = 0usize;
    let pilot_len = pilot.unwrap_or(0);
    while draws.len() < n_samples || proposed < pilot_len {
        if proposed >= opts.max_proposals {
            return Ok(None);
        }
        let c = cg.assemble(&propose(cg, rng));
        proposed += 1;
        if ineq.is_feasible(&c, 0.0)? {
            accepted += 1;
            if draws.len() < n_samples {
                draws.push(CoefVector::new(Arc::clone(&cg.partition), c)?);
            }
        }
        if proposed == pilot_len && pilot.is_some() {
            let rate = accepted as f64 / proposed as f64;
            if rate < opts.min_acceptance {
                log::info!("pilot acceptance {rate:.4} below {}; switching to Gibbs", opts.min_acceptance);
                return Ok(None);
            }
        }
    }
    Ok(Some(SampleBatch {
        draws,
        n_requested: n_samples,
        n_accepted: accepted,
        n_proposed: proposed,
        method: SamplingMethod::Rejection,
        rng_seed: seed,
        acceptance_rate: accepted as f64 / proposed as f64,
        burn_in: 0,
        thin: 1,
    }))
}

/// Constraint rows restricted to the free coordinates, with the data
/// contribution moved into the bounds.
struct FreeRows {
    /// `(free index, coefficient)` per row
    coeffs: Vec<Vec<(usize, f64)>>,
    lower: Vec<f64>,
    upper: Vec<f64>,
}

fn free_rows(cg: &ConditionalGaussian, ineq: &LinearInequalitySystem) -> Result<FreeRows> {
    let mut free_pos = vec![usize::MAX; cg.partition.len()];
    for (i, &k) in cg.free.iter().enumerate() {
        free_pos[k] = i;
    }
    let zero = cg.assemble(&DVector::zeros(cg.dim()));
    let mut out = FreeRows {
        coeffs: Vec::new(),
        lower: Vec::new(),
        upper: Vec::new(),
    };
    for row in ineq.rows() {
        let fixed_part = row.apply(&zero);
        let coeffs: Vec<(usize, f64)> = row
            .coeffs
            .iter()
            .filter(|(j, _)| free_pos[*j] != usize::MAX)
            .map(|&(j, g)| (free_pos[j], g))
            .collect();
        if coeffs.is_empty() {
            if row.violation(fixed_part) > 1e-12 * fixed_part.abs().max(1.0) {
                return Err(Error::InfeasiblePolytope);
            }
            continue;
        }
        out.coeffs.push(coeffs);
        out.lower.push(row.lower - fixed_part);
        out.upper.push(row.upper - fixed_part);
    }
    Ok(out)
}

/// A point of the polytope close to the mode of the truncated Gaussian.
/// Rows are first tightened by a small margin so the chain starts in the
/// interior; without an interior the untightened mode is used.
fn feasible_start(cg: &ConditionalGaussian, rows: &FreeRows) -> Result<DVector<f64>> {
    let scale = cg.mean.amax().max(cg.covariance.diagonal().amax().sqrt()).max(1.0);
    for margin in [1e-6 * scale, 0.0] {
        let mut cons = Vec::new();
        for ((coeffs, &lo), &hi) in rows.coeffs.iter().zip(&rows.lower).zip(&rows.upper) {
            let norm = coeffs.iter().map(|(_, g)| g * g).sum::<f64>().sqrt();
            let pad = if hi - lo > 4.0 * margin * norm { margin * norm } else { 0.0 };
            // in shifted coordinates w = x − mean
            let at_mean: f64 = coeffs.iter().map(|&(i, g)| g * cg.mean[i]).sum();
            if lo.is_finite() {
                cons.push(LinearConstraint::new(coeffs.clone(), lo + pad - at_mean));
            }
            if hi.is_finite() {
                let neg = coeffs.iter().map(|&(i, g)| (i, -g)).collect();
                cons.push(LinearConstraint::new(neg, at_mean - hi + pad));
            }
        }
        let out = qp::solve(
            &cg.factor,
            &[],
            &cons,
            &QpOptions {
                feasibility_tol: 1e-12,
                max_iter: 100 * (cg.dim() + 1),
            },
        );
        if out.status == QpStatus::Optimal {
            return Ok(&cg.mean + out.x);
        }
    }
    Err(Error::InfeasiblePolytope)
}

/// Gibbs sampler in whitened coordinates `x = mean + L z`. Each `z_i` has
/// a standard normal conditional truncated to an interval read off the
/// rows, which keeps mixing independent of how strongly correlated the
/// knot values are.
fn gibbs(
    cg: &ConditionalGaussian,
    ineq: &LinearInequalitySystem,
    n_samples: usize,
    seed: u64,
    opts: &SamplerOptions,
    rng: &mut ChaCha8Rng,
) -> Result<SampleBatch> {
    let m = cg.dim();
    let rows = free_rows(cg, ineq)?;
    let x0 = feasible_start(cg, &rows)?;
    let l = cg.factor.lower();
    let mut z = cg.factor.solve_lower(&(&x0 - &cg.mean));

    // W = G L: sensitivity of each row to each whitened coordinate
    let n_rows = rows.coeffs.len();
    let mut w = DMatrix::zeros(n_rows, m);
    let mut offset = DVector::zeros(n_rows);
    for (r, coeffs) in rows.coeffs.iter().enumerate() {
        for &(i, g) in coeffs {
            offset[r] += g * cg.mean[i];
            for c in 0..=i {
                w[(r, c)] += g * l[(i, c)];
            }
        }
    }
    let recompute = |z: &DVector<f64>| &offset + &w * z;
    let thin = opts.thin.max(1);
    let sweeps = opts.burn_in + n_samples * thin;
    let mut draws = Vec::with_capacity(n_samples);

    for sweep in 0..sweeps {
        // refresh row values each sweep to stop drift
        let mut v = recompute(&z);
        for i in 0..m {
            let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
            for r in 0..n_rows {
                let g = w[(r, i)];
                if g == 0.0 {
                    continue;
                }
                let rest = v[r] - g * z[i];
                let (a, b) = ((rows.lower[r] - rest) / g, (rows.upper[r] - rest) / g);
                let (a, b) = if g > 0.0 { (a, b) } else { (b, a) };
                lo = lo.max(a);
                hi = hi.min(b);
            }
            let value = if lo > hi {
                if lo - hi > 1e-9 * lo.abs().max(hi.abs()).max(1.0) {
                    return Err(Error::StallDetected {
                        coordinate: cg.free[i],
                        lower: lo,
                        upper: hi,
                    });
                }
                0.5 * (lo + hi)
            } else {
                truncated_standard_normal(lo, hi, rng).clamp(lo, hi)
            };
            let delta = value - z[i];
            if delta != 0.0 {
                for r in 0..n_rows {
                    v[r] += w[(r, i)] * delta;
                }
                z[i] = value;
            }
        }
        if sweep >= opts.burn_in && (sweep - opts.burn_in + 1).is_multiple_of(thin) {
            let x = &cg.mean + l * &z;
            draws.push(CoefVector::new(Arc::clone(&cg.partition), cg.assemble(&x))?);
        }
    }
    Ok(SampleBatch {
        n_accepted: draws.len(),
        draws,
        n_requested: n_samples,
        n_proposed: sweeps,
        method: SamplingMethod::Gibbs,
        rng_seed: seed,
        acceptance_rate: 1.0,
        burn_in: opts.burn_in,
        thin,
    })
}

/// One draw of `Z ~ N(0, 1)` conditioned on `a ≤ Z ≤ b`.
pub fn truncated_standard_normal<R: Rng + ?Sized>(a: f64, b: f64, rng: &mut R) -> f64 {
    debug_assert!(a <= b);
    if a == b {
        return a;
    }
    // work in the upper tail
    if b <= 0.0 {
        return -truncated_standard_normal(-b, -a, rng);
    }
    if a < 0.0 {
        // interval straddles zero
        if b - a > 2.5 {
            loop {
                let z: f64 = StandardNormal.sample(rng);
                if z >= a && z <= b {
                    return z;
                }
            }
        }
        loop {
            let u = rng.random_range(a..=b);
            if rng.random::<f64>() <= (-0.5 * u * u).exp() {
                return u;
            }
        }
    }
    // 0 ≤ a < b
    let width = b - a;
    if width < 1.0 / a.max(0.5) {
        // narrow interval: uniform proposal against the density at a
        loop {
            let u = rng.random_range(a..=b);
            if rng.random::<f64>() <= (0.5 * (a * a - u * u)).exp() {
                return u;
            }
        }
    }
    if a < 0.5 {
        loop {
            let z: f64 = StandardNormal.sample(rng);
            let z = z.abs();
            if z >= a && z <= b {
                return z;
            }
        }
    }
    // exponential proposal with the optimal rate
    let rate = 0.5 * (a + (a * a + 4.0).sqrt());
    let exp = Exp::new(rate).expect("positive rate");
    loop {
        let z = a + exp.sample(rng);
        if z > b {
            continue;
        }
        if rng.random::<f64>() <= (-0.5 * (z - rate) * (z - rate)).exp() {
            return z;
        }
    }
}

/// Pointwise Monte-Carlo summary of a batch on a grid.
#[derive(Debug, Clone, Serialize)]
pub struct PosteriorSummary {
    pub grid: Vec<f64>,
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
    /// `sd / √n`
    pub mcse: Vec<f64>,
    pub q025: Vec<f64>,
    pub q975: Vec<f64>,
}

pub fn posterior_summary(batch: &SampleBatch, grid: &[f64]) -> Result<PosteriorSummary> {
    let n = batch.draws.len();
    if n == 0 {
        return Err(Error::EmptyBatch);
    }
    let curves: Vec<Vec<f64>> = batch
        .draws
        .iter()
        .map(|d| d.evaluate_many(grid))
        .collect::<Result<_>>()?;
    let mut out = PosteriorSummary {
        grid: grid.to_vec(),
        mean: Vec::with_capacity(grid.len()),
        sd: Vec::with_capacity(grid.len()),
        mcse: Vec::with_capacity(grid.len()),
        q025: Vec::with_capacity(grid.len()),
        q975: Vec::with_capacity(grid.len()),
    };
    let mut column = vec![0.0; n];
    for g in 0..grid.len() {
        for (d, curve) in curves.iter().enumerate() {
            column[d] = curve[g];
        }
        let mean = column.iter().sum::<f64>() / n as f64;
        let var = if n > 1 {
            column.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64
        } else {
            0.0
        };
        column.sort_by(|a, b| a.partial_cmp(b).unwrap());
        out.mean.push(mean);
        out.sd.push(var.sqrt());
        out.mcse.push((var / n as f64).sqrt());
        out.q025.push(quantile_sorted(&column, 0.025));
        out.q975.push(quantile_sorted(&column, 0.975));
    }
    Ok(out)
}

/// Linear-interpolation quantile of sorted data.
fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}
