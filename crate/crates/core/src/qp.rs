//! Dual active-set method (Goldfarb–Idnani) for strictly convex quadratic
//! programs of the form
//!
//! ```text
//!     minimize    ½ xᵀ Σ⁻¹ x
//!     subject to  aᵢᵀ x  = bᵢ   (equalities)
//!                 nⱼᵀ x ≥ bⱼ   (inequalities)
//! ```
//!
//! where `Σ = L Lᵀ` is given by its Cholesky factor. The method starts from
//! the unconstrained minimizer `x = 0` and adds violated constraints one at
//! a time while keeping dual feasibility, so `Σ⁻¹` is never formed: the
//! working matrix `J` starts as `L` itself (`J Jᵀ = Σ`). An empty feasible
//! set shows up as an unbounded dual step.

use nalgebra::{DMatrix, DVector};

use crate::linalg::CholeskyFactor;

/// Sparse linear constraint `coeffs · x (= or ≥) rhs`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearConstraint {
    pub coeffs: Vec<(usize, f64)>,
    pub rhs: f64,
}

impl LinearConstraint {
    pub fn new(coeffs: Vec<(usize, f64)>, rhs: f64) -> Self {
        Self { coeffs, rhs }
    }

    pub fn dot(&self, x: &DVector<f64>) -> f64 {
        self.coeffs.iter().map(|&(j, g)| g * x[j]).sum()
    }

    fn scaled(&self, sign: f64) -> Self {
        Self {
            coeffs: self.coeffs.iter().map(|&(j, g)| (j, sign * g)).collect(),
            rhs: sign * self.rhs,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QpStatus {
    Optimal,
    Infeasible,
    MaxIter,
}

#[derive(Debug, Clone)]
pub struct QpOptions {
    /// Inequalities violated by less than `feasibility_tol · max(1, |rhs|)`
    /// are treated as satisfied.
    pub feasibility_tol: f64,
    /// Limit on the number of active-set changes.
    pub max_iter: usize,
}

impl Default for QpOptions {
    fn default() -> Self {
        Self {
            feasibility_tol: 1e-11,
            max_iter: 10_000,
        }
    }
}

#[derive(Debug, Clone)]
pub struct QpOutcome {
    pub x: DVector<f64>,
    /// One multiplier per equality (free sign).
    pub eq_multipliers: Vec<f64>,
    /// One multiplier per inequality, non-negative at optimality.
    pub ineq_multipliers: Vec<f64>,
    /// Active inequality indices at exit.
    pub active_inequalities: Vec<usize>,
    pub iterations: usize,
    pub status: QpStatus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Slot {
    Eq(usize),
    Ineq(usize),
}

/// `‖d₂‖ ≤ DEPENDENT · ‖d‖` means the new normal lies in the span of the
/// active ones.
const DEPENDENT: f64 = 1e-11;

struct Workspace {
    n: usize,
    x: DVector<f64>,
    j: DMatrix<f64>,
    r: DMatrix<f64>,
    active: Vec<Slot>,
    u: Vec<f64>,
    /// Normals of active equalities, possibly sign-flipped.
    eq_sign: Vec<f64>,
}

impl Workspace {
    fn q(&self) -> usize {
        self.active.len()
    }

    fn j_t_times(&self, c: &LinearConstraint) -> DVector<f64> {
        let mut d = DVector::zeros(self.n);
        for &(k, g) in &c.coeffs {
            for i in 0..self.n {
                d[i] += g * self.j[(k, i)];
            }
        }
        d
    }

    /// `z = J₂ d₂` and `r = R⁻¹ d₁`.
    fn directions(&self, d: &DVector<f64>) -> (DVector<f64>, DVector<f64>, f64) {
        let q = self.q();
        let mut z = DVector::zeros(self.n);
        let mut d2_sq = 0.0;
        for i in q..self.n {
            let di = d[i];
            if di != 0.0 {
                d2_sq += di * di;
                for k in 0..self.n {
                    z[k] += self.j[(k, i)] * di;
                }
            }
        }
        let mut r = DVector::zeros(q);
        for i in (0..q).rev() {
            let mut s = d[i];
            for k in (i + 1)..q {
                s -= self.r[(i, k)] * r[k];
            }
            r[i] = s / self.r[(i, i)];
        }
        (z, r, d2_sq)
    }

    fn rotate_j_columns(&mut self, a: usize, b: usize, c: f64, s: f64) {
        for k in 0..self.n {
            let ja = self.j[(k, a)];
            let jb = self.j[(k, b)];
            self.j[(k, a)] = c * ja + s * jb;
            self.j[(k, b)] = -s * ja + c * jb;
        }
    }

    fn add(&mut self, mut d: DVector<f64>, slot: Slot, u_plus: f64) {
        let q = self.q();
        for i in ((q + 1)..self.n).rev() {
            let (a, b) = (d[i - 1], d[i]);
            if b == 0.0 {
                continue;
            }
            let h = a.hypot(b);
            let (c, s) = (a / h, b / h);
            d[i - 1] = h;
            d[i] = 0.0;
            self.rotate_j_columns(i - 1, i, c, s);
        }
        for i in 0..=q {
            self.r[(i, q)] = d[i];
        }
        self.active.push(slot);
        self.u.push(u_plus);
    }

    fn drop(&mut self, pos: usize) {
        let q = self.q();
        self.active.remove(pos);
        self.u.remove(pos);
        for col in pos..(q - 1) {
            for row in 0..q {
                self.r[(row, col)] = self.r[(row, col + 1)];
            }
        }
        for row in 0..q {
            self.r[(row, q - 1)] = 0.0;
        }
        for j in pos..(q - 1) {
            let (a, b) = (self.r[(j, j)], self.r[(j + 1, j)]);
            if b == 0.0 {
                continue;
            }
            let h = a.hypot(b);
            let (c, s) = (a / h, b / h);
            for col in j..(q - 1) {
                let ra = self.r[(j, col)];
                let rb = self.r[(j + 1, col)];
                self.r[(j, col)] = c * ra + s * rb;
                self.r[(j + 1, col)] = -s * ra + c * rb;
            }
            self.r[(j + 1, j)] = 0.0;
            self.rotate_j_columns(j, j + 1, c, s);
        }
    }
}

/// Solves the program; the result is deterministic for identical inputs.
pub fn solve(
    cov_factor: &CholeskyFactor,
    equalities: &[LinearConstraint],
    inequalities: &[LinearConstraint],
    opts: &QpOptions,
) -> QpOutcome {
    let n = cov_factor.dim();
    let mut ws = Workspace {
        n,
        x: DVector::zeros(n),
        j: cov_factor.lower().clone(),
        r: DMatrix::zeros(n, n),
        active: Vec::new(),
        u: Vec::new(),
        eq_sign: vec![1.0; equalities.len()],
    };
    let mut iterations = 0usize;
    let mut next_eq = 0usize;

    let finish = |ws: Workspace, iterations: usize, status: QpStatus| {
        let mut eq_multipliers = vec![0.0; equalities.len()];
        let mut ineq_multipliers = vec![0.0; inequalities.len()];
        let mut active_inequalities = Vec::new();
        for (slot, &u) in ws.active.iter().zip(&ws.u) {
            match *slot {
                Slot::Eq(i) => eq_multipliers[i] = ws.eq_sign[i] * u,
                Slot::Ineq(i) => {
                    ineq_multipliers[i] = u;
                    active_inequalities.push(i);
                }
            }
        }
        active_inequalities.sort_unstable();
        QpOutcome {
            x: ws.x,
            eq_multipliers,
            ineq_multipliers,
            active_inequalities,
            iterations,
            status,
        }
    };

    loop {
        // step 1: pick a violated constraint
        let (slot, normal) = if next_eq < equalities.len() {
            let i = next_eq;
            next_eq += 1;
            let e = &equalities[i];
            let s = e.dot(&ws.x) - e.rhs;
            let sign = if s > 0.0 { -1.0 } else { 1.0 };
            ws.eq_sign[i] = sign;
            (Slot::Eq(i), e.scaled(sign))
        } else {
            let mut worst: Option<(usize, f64)> = None;
            for (i, c) in inequalities.iter().enumerate() {
                if ws.active.contains(&Slot::Ineq(i)) {
                    continue;
                }
                let s = c.dot(&ws.x) - c.rhs;
                let eps = opts.feasibility_tol * c.rhs.abs().max(1.0);
                if s < -eps && worst.is_none_or(|(_, w)| s < w) {
                    worst = Some((i, s));
                }
            }
            match worst {
                None => return finish(ws, iterations, QpStatus::Optimal),
                Some((i, _)) => (Slot::Ineq(i), inequalities[i].clone()),
            }
        };

        let mut u_plus = 0.0;
        // step 2: move until the new constraint is satisfied
        loop {
            if iterations >= opts.max_iter {
                return finish(ws, iterations, QpStatus::MaxIter);
            }
            let s = normal.dot(&ws.x) - normal.rhs;
            let d = ws.j_t_times(&normal);
            let (z, r, d2_sq) = ws.directions(&d);
            let dependent = d2_sq.sqrt() <= DEPENDENT * d.norm();

            // partial step length: first active inequality whose multiplier hits zero
            let mut t1: Option<(f64, usize)> = None;
            for (pos, slot_k) in ws.active.iter().enumerate() {
                if let Slot::Ineq(_) = slot_k {
                    if r[pos] > 0.0 {
                        let t = ws.u[pos] / r[pos];
                        if t1.is_none_or(|(best, _)| t < best) {
                            t1 = Some((t, pos));
                        }
                    }
                }
            }
            let t2 = if dependent { None } else { Some((-s / d2_sq).max(0.0)) };

            match (t1, t2) {
                (None, None) => {
                    if matches!(slot, Slot::Eq(_)) && s.abs() <= opts.feasibility_tol * normal.rhs.abs().max(1.0) {
                        // redundant equality, already satisfied
                        break;
                    }
                    return finish(ws, iterations, QpStatus::Infeasible);
                }
                (Some((t, pos)), None) => {
                    for (k, uk) in ws.u.iter_mut().enumerate() {
                        *uk -= t * r[k];
                    }
                    u_plus += t;
                    ws.drop(pos);
                    iterations += 1;
                }
                (t1, Some(t2)) => {
                    let (t, drop_pos) = match t1 {
                        Some((t1, pos)) if t1 < t2 => (t1, Some(pos)),
                        _ => (t2, None),
                    };
                    ws.x += &z * t;
                    for (k, uk) in ws.u.iter_mut().enumerate() {
                        *uk -= t * r[k];
                    }
                    u_plus += t;
                    iterations += 1;
                    match drop_pos {
                        Some(pos) => ws.drop(pos),
                        None => {
                            ws.add(d, slot, u_plus);
                            break;
                        }
                    }
                }
            }
        }
    }
}
