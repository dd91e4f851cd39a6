//! MAP estimation of the constrained posterior: the minimum-`H_N`-norm
//! interpolant in the constraint set, found by quadratic programming on the
//! knot values.

use std::sync::Arc;

use nalgebra::DVector;
use serde::Serialize;

use crate::constraints::{encode_all, ConstraintSpec, LinearInequalitySystem};
use crate::error::{Error, Result};
use crate::kernel::{GramMatrix, Kernel};
use crate::partition::{uniform_grid, CoefVector, Partition, KNOT_TOLERANCE};
use crate::qp::{self, LinearConstraint, QpOptions, QpStatus};
use crate::rkhs::{DesignData, KrigingModel};

pub const DEFAULT_TOL: f64 = 1e-8;

/// Inactive rows with less slack than this trigger a warning: the feasible
/// set may have (numerically) empty interior.
pub const SLACK_WARNING: f64 = 1e-6;

/// `min cᵀ Γ⁻¹ c` subject to `c[eq_indices] = eq_values` and the
/// inequality system.
#[derive(Debug, Clone)]
pub struct QpProblem {
    pub partition: Arc<Partition>,
    pub gram: GramMatrix,
    pub eq_indices: Vec<usize>,
    pub eq_values: Vec<f64>,
    pub ineq: LinearInequalitySystem,
    /// Knot each datum was attached to, in data order.
    pub data_knots: Vec<f64>,
}

impl QpProblem {
    pub fn dim(&self) -> usize {
        self.partition.len()
    }

    /// Default iteration budget `50·(N+1)`.
    pub fn default_max_iter(&self) -> usize {
        50 * self.dim()
    }
}

/// Attaches every datum to a knot of `p` (snapping to the nearest knot when
/// closer than half the mesh, inserting a new knot otherwise), then encodes
/// the interpolation equalities and the shape constraints.
pub fn build_problem(
    data: &DesignData,
    specs: &[ConstraintSpec],
    p: &Partition,
    kernel: &Kernel,
) -> Result<QpProblem> {
    data.validate()?;
    for s in specs {
        s.validate()?;
    }
    let half_mesh = 0.5 * p.mesh();
    let mut inserted = Vec::new();
    for &x in &data.points {
        let j = p.nearest_knot(x).expect("partition is non-empty");
        let dist = (p.knots()[j] - x).abs();
        if dist > KNOT_TOLERANCE && dist >= half_mesh - KNOT_TOLERANCE {
            inserted.push(x);
        }
    }
    let partition = if inserted.is_empty() {
        p.clone()
    } else {
        p.refine(&inserted)?
    };

    let mut eq_indices = Vec::with_capacity(data.len());
    let mut data_knots = Vec::with_capacity(data.len());
    for (i, &x) in data.points.iter().enumerate() {
        let j = partition.nearest_knot(x).expect("partition is non-empty");
        if let Some(prev) = eq_indices.iter().position(|&k| k == j) {
            return Err(Error::DataCollision {
                first: data.points[prev],
                second: x,
                knot: partition.knots()[j],
            });
        }
        if (partition.knots()[j] - x).abs() > KNOT_TOLERANCE {
            log::debug!("datum {i} at x = {x} snapped to knot {}", partition.knots()[j]);
        }
        eq_indices.push(j);
        data_knots.push(partition.knots()[j]);
    }

    let gram = GramMatrix::new(kernel, partition.knots())?;
    let ineq = encode_all(specs, &partition);
    Ok(QpProblem {
        partition: Arc::new(partition),
        gram,
        eq_indices,
        eq_values: data.values.clone(),
        ineq,
        data_knots,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum MapStatus {
    Optimal,
    Infeasible,
    MaxIter,
}

/// Relative KKT residuals, recomputed from the problem data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Default)]
pub struct KktResiduals {
    /// `‖c − Γ(Aᵀν)‖_∞ / max(1, ‖c‖_∞)`
    pub stationarity: f64,
    /// `max |c_k − y_k| / max(1, ‖y‖_∞)`
    pub primal_eq: f64,
    /// `max row violation / max(1, ‖c‖_∞)`
    pub primal_ineq: f64,
    /// Multiplier–slack products and wrong-sign multipliers, relative to
    /// `max(1, objective)`.
    pub complementarity: f64,
}

impl KktResiduals {
    pub fn max(&self) -> f64 {
        self.stationarity
            .max(self.primal_eq)
            .max(self.primal_ineq)
            .max(self.complementarity)
    }
}

#[derive(Debug, Clone)]
pub struct MapSolution {
    pub coef: CoefVector,
    /// `‖h‖²_{H_N}` of the minimizer.
    pub objective: f64,
    pub kkt: KktResiduals,
    pub iterations: usize,
    pub status: MapStatus,
    pub eq_multipliers: Vec<f64>,
    /// Net multiplier per inequality row: positive when the lower side
    /// binds, negative when the upper side binds.
    pub ineq_multipliers: Vec<f64>,
    pub active_rows: Vec<usize>,
    /// Smallest slack among inactive rows.
    pub min_slack: Option<f64>,
    pub jitter: f64,
}

impl MapSolution {
    /// Turns a non-optimal status into the matching error.
    pub fn into_result(self) -> Result<Self> {
        match self.status {
            MapStatus::Optimal => Ok(self),
            MapStatus::Infeasible => Err(Error::Infeasible),
            MapStatus::MaxIter => Err(Error::MaxIter {
                iterations: self.iterations,
            }),
        }
    }
}

/// Solves the MAP problem with the dual active-set method.
pub fn solve_map(qp: &QpProblem, tol: f64, max_iter: usize) -> Result<MapSolution> {
    if !(tol > 0.0) {
        return Err(Error::InvalidInput(format!("tol must be positive, got {tol}")));
    }
    let n = qp.dim();
    let equalities: Vec<LinearConstraint> = qp
        .eq_indices
        .iter()
        .zip(&qp.eq_values)
        .map(|(&k, &y)| LinearConstraint::new(vec![(k, 1.0)], y))
        .collect();

    // each two-sided row becomes up to two one-sided rows
    let mut inequalities = Vec::new();
    let mut origin = Vec::new();
    for (i, row) in qp.ineq.rows().iter().enumerate() {
        if row.lower.is_finite() {
            inequalities.push(LinearConstraint::new(row.coeffs.clone(), row.lower));
            origin.push((i, 1.0));
        }
        if row.upper.is_finite() {
            let neg = row.coeffs.iter().map(|&(j, g)| (j, -g)).collect();
            inequalities.push(LinearConstraint::new(neg, -row.upper));
            origin.push((i, -1.0));
        }
    }

    let opts = QpOptions {
        feasibility_tol: 1e-3 * tol,
        max_iter,
    };
    let out = qp::solve(qp.gram.factor(), &equalities, &inequalities, &opts);

    let mut ineq_multipliers = vec![0.0; qp.ineq.len()];
    let mut active_rows = Vec::new();
    for (k, &lambda) in out.ineq_multipliers.iter().enumerate() {
        let (row, sign) = origin[k];
        ineq_multipliers[row] += sign * lambda;
    }
    for &k in &out.active_inequalities {
        active_rows.push(origin[k].0);
    }
    active_rows.sort_unstable();
    active_rows.dedup();

    let values: Vec<f64> = out.x.iter().copied().collect();
    let coef = CoefVector::new(Arc::clone(&qp.partition), values)?;
    let objective = qp.gram.quad_form(&out.x);
    let status = match out.status {
        QpStatus::Optimal => MapStatus::Optimal,
        QpStatus::Infeasible => MapStatus::Infeasible,
        QpStatus::MaxIter => MapStatus::MaxIter,
    };
    let kkt = certify_kkt(qp, &coef, &out.eq_multipliers, &ineq_multipliers)?;
    let min_slack = inactive_min_slack(&qp.ineq, coef.values(), &active_rows);
    if status == MapStatus::Optimal {
        if kkt.max() > tol {
            log::warn!("KKT residuals {kkt:?} exceed tolerance {tol:e}");
        }
        if let Some(s) = min_slack {
            if s < SLACK_WARNING {
                log::warn!("smallest inactive slack {s:e} < {SLACK_WARNING:e}: interior of the feasible set may be empty");
            }
        }
    }
    debug_assert_eq!(coef.values().len(), n);
    Ok(MapSolution {
        coef,
        objective,
        kkt,
        iterations: out.iterations,
        status,
        eq_multipliers: out.eq_multipliers,
        ineq_multipliers,
        active_rows,
        min_slack,
        jitter: qp.gram.jitter_applied(),
    })
}

/// Solves with the default tolerance and iteration budget, failing on any
/// non-optimal status.
pub fn solve_map_default(qp: &QpProblem) -> Result<MapSolution> {
    solve_map(qp, DEFAULT_TOL, qp.default_max_iter())?.into_result()
}

fn inactive_min_slack(sys: &LinearInequalitySystem, c: &[f64], active: &[usize]) -> Option<f64> {
    sys.rows()
        .iter()
        .enumerate()
        .filter(|(i, _)| active.binary_search(i).is_err())
        .flat_map(|(_, r)| {
            let v = r.apply(c);
            [v - r.lower, r.upper - v]
        })
        .filter(|s| s.is_finite())
        .min_by(|a, b| a.partial_cmp(b).unwrap())
}

/// Recomputes KKT residuals of `(c, ν)` from the problem data alone.
///
/// Stationarity is checked in the form `c = Γ (Σ νᵢ gᵢ)`, which needs only
/// a product with `Γ`.
pub fn certify_kkt(
    qp: &QpProblem,
    coef: &CoefVector,
    eq_multipliers: &[f64],
    ineq_multipliers: &[f64],
) -> Result<KktResiduals> {
    let n = qp.dim();
    let c = coef.values();
    if c.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: c.len(),
        });
    }
    if eq_multipliers.len() != qp.eq_indices.len() || ineq_multipliers.len() != qp.ineq.len() {
        return Err(Error::DimensionMismatch {
            expected: qp.eq_indices.len() + qp.ineq.len(),
            found: eq_multipliers.len() + ineq_multipliers.len(),
        });
    }
    let c_inf = c.iter().fold(0.0_f64, |m, v| m.max(v.abs())).max(1.0);

    let mut g = DVector::<f64>::zeros(n);
    for (&k, &mu) in qp.eq_indices.iter().zip(eq_multipliers) {
        g[k] += mu;
    }
    for (row, &lambda) in qp.ineq.rows().iter().zip(ineq_multipliers) {
        for &(j, a) in &row.coeffs {
            g[j] += lambda * a;
        }
    }
    let reconstructed = qp.gram.jittered() * &g;
    let stationarity = c
        .iter()
        .zip(reconstructed.iter())
        .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()))
        / c_inf;

    let y_inf = qp
        .eq_values
        .iter()
        .fold(0.0_f64, |m, v| m.max(v.abs()))
        .max(1.0);
    let primal_eq = qp
        .eq_indices
        .iter()
        .zip(&qp.eq_values)
        .fold(0.0_f64, |m, (&k, &y)| m.max((c[k] - y).abs()))
        / y_inf;

    let primal_ineq = qp.ineq.max_violation(c)? / c_inf;

    let objective = qp.gram.quad_form(&DVector::from_column_slice(c)).max(1.0);
    let mut compl = 0.0_f64;
    for (row, &lambda) in qp.ineq.rows().iter().zip(ineq_multipliers) {
        let v = row.apply(c);
        let term = if lambda > 0.0 {
            if row.lower.is_finite() {
                lambda * (v - row.lower).abs()
            } else {
                lambda * c_inf
            }
        } else if lambda < 0.0 {
            if row.upper.is_finite() {
                -lambda * (row.upper - v).abs()
            } else {
                -lambda * c_inf
            }
        } else {
            0.0
        };
        compl = compl.max(term);
    }
    Ok(KktResiduals {
        stationarity,
        primal_eq,
        primal_ineq,
        complementarity: compl / objective,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct LevelResult {
    pub n_cells: usize,
    pub n_knots: usize,
    pub objective: f64,
    pub iterations: usize,
    pub jitter: f64,
    pub kkt: KktResiduals,
    pub active_rows: usize,
}

/// MAP solutions along a ladder of nested uniform partitions.
#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceReport {
    pub levels: Vec<usize>,
    pub grid: Vec<f64>,
    /// `‖h_{N_{k+1}} − h_{N_k}‖_∞` on the grid, one per consecutive pair.
    pub sup_gaps: Vec<f64>,
    /// `‖h_N − ŷ‖_∞` on the grid against the smooth kriging mean.
    pub kriging_gaps: Vec<f64>,
    pub objectives: Vec<f64>,
    pub per_level: Vec<LevelResult>,
    #[serde(skip)]
    pub solutions: Vec<MapSolution>,
}

impl ConvergenceReport {
    pub fn finest(&self) -> Option<&MapSolution> {
        self.solutions.last()
    }

    /// Every objective ≤ finest objective · (1 + rel).
    pub fn objectives_bounded_by_finest(&self, rel: f64) -> bool {
        match self.objectives.last() {
            Some(&top) => self.objectives.iter().all(|&o| o <= top * (1.0 + rel)),
            None => true,
        }
    }
}

/// Solves on uniform partitions with the given numbers of cells and
/// compares consecutive solutions on a `grid_size`-point grid. Each level
/// must divide the next so the partitions are nested.
pub fn convergence_ladder(
    data: &DesignData,
    specs: &[ConstraintSpec],
    kernel: &Kernel,
    levels: &[usize],
    grid_size: usize,
    parallel: bool,
) -> Result<ConvergenceReport> {
    if levels.is_empty() {
        return Err(Error::InvalidInput("at least one level is required".into()));
    }
    for w in levels.windows(2) {
        if w[0] == 0 || w[1] % w[0] != 0 || w[1] <= w[0] {
            return Err(Error::InvalidInput(format!(
                "levels {} and {} are not nested",
                w[0], w[1]
            )));
        }
    }
    let solve_level = |n: usize| -> Result<MapSolution> {
        let p = Partition::uniform(n)?;
        let qp = build_problem(data, specs, &p, kernel)?;
        solve_map_default(&qp)
    };
    let solutions: Vec<MapSolution> = if parallel {
        std::thread::scope(|scope| {
            let handles: Vec<_> = levels
                .iter()
                .map(|&n| scope.spawn(move || solve_level(n)))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("level solver panicked"))
                .collect::<Result<Vec<_>>>()
        })?
    } else {
        levels.iter().map(|&n| solve_level(n)).collect::<Result<Vec<_>>>()?
    };

    for w in solutions.windows(2) {
        if !w[0].coef.partition().is_nested_in(w[1].coef.partition()) {
            return Err(Error::InvalidInput(
                "data insertion broke the nesting of the ladder".into(),
            ));
        }
    }

    let grid = uniform_grid(grid_size);
    let curves: Vec<Vec<f64>> = solutions
        .iter()
        .map(|s| s.coef.evaluate_many(&grid))
        .collect::<Result<_>>()?;
    let sup_gaps = curves
        .windows(2)
        .map(|w| sup_diff(&w[0], &w[1]))
        .collect();
    let kriging = KrigingModel::fit(data, kernel)?.predict_many(&grid);
    let kriging_gaps = curves.iter().map(|c| sup_diff(c, &kriging)).collect();

    let per_level = solutions
        .iter()
        .map(|s| LevelResult {
            n_cells: s.coef.partition().n_cells(),
            n_knots: s.coef.partition().len(),
            objective: s.objective,
            iterations: s.iterations,
            jitter: s.jitter,
            kkt: s.kkt,
            active_rows: s.active_rows.len(),
        })
        .collect();

    Ok(ConvergenceReport {
        levels: levels.to_vec(),
        objectives: solutions.iter().map(|s| s.objective).collect(),
        grid,
        sup_gaps,
        kriging_gaps,
        per_level,
        solutions,
    })
}

pub fn sup_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .fold(0.0_f64, |m, (x, y)| m.max((x - y).abs()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::partition::project;
    use crate::rkhs::hn_norm_sq;
    use approx::assert_relative_eq;

    fn se() -> Kernel {
        Kernel::squared_exponential(25.0, 0.2).unwrap()
    }

    fn fig_data() -> DesignData {
        DesignData::new(vec![0.06, 0.36, 0.64, 0.94], vec![-5.0, 17.0, 19.0, -3.0]).unwrap()
    }

    #[test]
    fn data_on_knots_only_equalities() {
        let p = Partition::uniform(50).unwrap();
        let qp = build_problem(&fig_data(), &[ConstraintSpec::None], &p, &se()).unwrap();
        assert_eq!(qp.dim(), 51);
        assert_eq!(qp.eq_indices, vec![3, 18, 32, 47]);
        assert!(qp.ineq.is_empty());
    }

    #[test]
    fn midpoint_datum_is_inserted() {
        let p = Partition::uniform(50).unwrap();
        let d = DesignData::new(vec![0.33], vec![1.0]).unwrap();
        let qp = build_problem(&d, &[], &p, &se()).unwrap();
        assert_eq!(qp.dim(), 52);
        assert!(qp.partition.index_of(0.33).is_some());
        assert!(p.is_nested_in(&qp.partition));
    }

    #[test]
    fn nearby_datum_is_snapped() {
        let p = Partition::uniform(50).unwrap();
        let d = DesignData::new(vec![0.331], vec![1.0]).unwrap();
        let qp = build_problem(&d, &[], &p, &se()).unwrap();
        assert_eq!(qp.dim(), 51);
        assert_eq!(qp.data_knots, vec![0.34]);
    }

    #[test]
    fn colliding_data() {
        let p = Partition::uniform(4).unwrap();
        let d = DesignData::new(vec![0.501, 0.502], vec![1.0, 2.0]).unwrap();
        assert!(matches!(
            build_problem(&d, &[], &p, &se()),
            Err(Error::DataCollision { knot, .. }) if knot == 0.5
        ));
    }

    #[test]
    fn all_knots_are_data() {
        let p = Partition::uniform(4).unwrap();
        let ys = vec![1.0, -2.0, 3.0, 0.5, 4.0];
        let d = DesignData::new(p.knots().to_vec(), ys.clone()).unwrap();
        let qp = build_problem(&d, &[ConstraintSpec::None], &p, &se()).unwrap();
        let sol = solve_map_default(&qp).unwrap();
        for (a, b) in sol.coef.values().iter().zip(&ys) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn datum_outside_bounds_is_infeasible() {
        let p = Partition::uniform(50).unwrap();
        let d = DesignData::new(vec![0.5], vec![30.0]).unwrap();
        let spec = ConstraintSpec::bounds(-25.0, 20.0).unwrap();
        let qp = build_problem(&d, &[spec], &p, &se()).unwrap();
        let sol = solve_map(&qp, DEFAULT_TOL, qp.default_max_iter()).unwrap();
        assert_eq!(sol.status, MapStatus::Infeasible);
        assert!(matches!(sol.into_result(), Err(Error::Infeasible)));
    }

    #[test]
    fn unconstrained_map_is_kriging_at_knots() {
        let p = Partition::uniform(50).unwrap();
        let d = fig_data();
        let qp = build_problem(&d, &[], &p, &se()).unwrap();
        let sol = solve_map_default(&qp).unwrap();
        let model = KrigingModel::fit(&d, &se()).unwrap();
        let kr = project(|x| model.predict(x), &qp.partition);
        for (a, b) in sol.coef.values().iter().zip(kr.values()) {
            assert!((a - b).abs() < 1e-6 * 25.0, "{a} vs {b}");
        }
        assert!(sol.kkt.max() <= DEFAULT_TOL, "{:?}", sol.kkt);
        // the kriging knot vector is the minimum-norm interpolant
        assert_relative_eq!(
            hn_norm_sq(&kr, &qp.gram).unwrap(),
            sol.objective,
            max_relative = 1e-6
        );
    }

    #[test]
    fn bounded_map_certifies_and_is_deterministic() {
        let p = Partition::uniform(50).unwrap();
        let spec = ConstraintSpec::bounds(-25.0, 20.0).unwrap();
        let qp = build_problem(&fig_data(), &[spec], &p, &se()).unwrap();
        let a = solve_map_default(&qp).unwrap();
        let b = solve_map_default(&qp).unwrap();
        assert_eq!(a.coef.values(), b.coef.values());
        assert!(!a.active_rows.is_empty());
        assert!(a.kkt.max() <= DEFAULT_TOL, "{:?}", a.kkt);
        assert!(qp.ineq.is_feasible(a.coef.values(), 1e-8).unwrap());
    }

    #[test]
    fn rejects_bad_tolerance() {
        let p = Partition::uniform(4).unwrap();
        let qp = build_problem(&fig_data(), &[], &p, &se()).unwrap();
        assert!(solve_map(&qp, 0.0, 10).is_err());
    }

    #[test]
    fn ladder_levels_must_nest() {
        let r = convergence_ladder(&fig_data(), &[], &se(), &[25, 40], 101, false);
        assert!(r.is_err());
    }

    #[test]
    fn inactive_constraints_leave_solution_unchanged() {
        let p = Partition::uniform(50).unwrap();
        let free = solve_map_default(&build_problem(&fig_data(), &[], &p, &se()).unwrap()).unwrap();
        let loose = ConstraintSpec::bounds(-1000.0, 1000.0).unwrap();
        let boxed = solve_map_default(&build_problem(&fig_data(), &[loose], &p, &se()).unwrap()).unwrap();
        let grid = uniform_grid(2001);
        let gap = sup_diff(
            &free.coef.evaluate_many(&grid).unwrap(),
            &boxed.coef.evaluate_many(&grid).unwrap(),
        );
        assert!(gap <= 1e-8, "gap {gap}");
        assert!(boxed.active_rows.is_empty());
    }
}
