//! Acceptance suite: one line per criterion, nonzero exit if any fails.

use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;
use std::time::{Duration, Instant};

use cgp_core::config::ExperimentConfig;
use cgp_core::constraints::{check_h2, ConstraintSpec, NamedFunction};
use cgp_core::experiment::compute_figure;
use cgp_core::kernel::{GramMatrix, Kernel};
use cgp_core::map::{build_problem, convergence_ladder, solve_map, MapStatus, QpProblem, DEFAULT_TOL};
use cgp_core::partition::{uniform_grid, CoefVector, Partition};
use cgp_core::rkhs::{check_block_lemma, hn_norm_sq, norm_ladder, DesignData};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn se() -> Kernel {
    Kernel::squared_exponential(25.0, 0.2).unwrap()
}

fn config(name: &str) -> ExperimentConfig {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join(format!("../../configs/{name}.toml"));
    ExperimentConfig::load(&path).unwrap()
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn c1_norm_monotonicity() -> Outcome {
    let kernel = se();
    let ladder = Partition::uniform(4).unwrap().dyadic_ladder(4);
    let s: Vec<f64> = ladder[0].knots().to_vec();
    let gs = kernel.cross(&s, &s);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst_drop = 0.0_f64;
    let mut worst_excess = f64::NEG_INFINITY;
    for _ in 0..50 {
        let a = DVector::from_fn(s.len(), |_, _| rng.random_range(-1.0..=1.0));
        let exact = (a.transpose() * &gs * &a)[(0, 0)];
        let f = |x: f64| s.iter().zip(a.iter()).map(|(&si, &ai)| ai * kernel.evaluate(x, si)).sum::<f64>();
        let seq = norm_ladder(f, &ladder, &kernel).map_err(|e| e.to_string())?;
        for w in seq.values.windows(2) {
            worst_drop = worst_drop.max((w[0] - w[1]) / w[0].abs().max(f64::MIN_POSITIVE));
        }
        for v in &seq.values {
            worst_excess = worst_excess.max((v - exact) / exact);
        }
    }
    ensure(worst_drop <= 1e-8, || format!("relative drop {worst_drop:e} > 1e-8"))?;
    ensure(worst_excess <= 1e-6, || format!("m_N exceeds ||f||^2 by relative {worst_excess:e}"))?;
    Ok(format!("max relative drop {worst_drop:.1e}, max m_N/||f||^2 - 1 = {worst_excess:.1e}"))
}

fn c2_block_lemma() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = f64::INFINITY;
    for _ in 0..1000 {
        let n = rng.random_range(2..=12);
        let m = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..=1.0));
        let b = &m * m.transpose() + DMatrix::identity(n, n) * 1e-3;
        let y = DVector::from_fn(n, |_, _| rng.random_range(-1.0..=1.0));
        let (full, lead) = check_block_lemma(&b, &y).map_err(|e| e.to_string())?;
        let slack = (full - lead) / lead.abs().max(f64::MIN_POSITIVE);
        worst = worst.min(slack);
        ensure(full >= lead - 1e-10 * lead.abs(), || format!("y'B^-1y = {full} < x'A^-1x = {lead}"))?;
    }
    Ok(format!("1000 matrices, min relative gap {worst:.2e}"))
}

fn c3_uniform_bound() -> Outcome {
    let kernel = se();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let grid = uniform_grid(20_001);
    let mut worst = 0.0_f64;
    for n in [8, 32, 128] {
        let p = Arc::new(Partition::uniform(n).unwrap());
        let g = GramMatrix::new(&kernel, p.knots()).map_err(|e| e.to_string())?;
        for _ in 0..200 {
            let scale = 10f64.powf(rng.random_range(-2.0..2.0));
            let values = (0..p.len()).map(|_| scale * rng.random_range(-1.0..=1.0)).collect();
            let c = CoefVector::new(Arc::clone(&p), values).unwrap();
            let sup = c.evaluate_many(&grid).unwrap().iter().fold(0.0_f64, |m, v| m.max(v.abs()));
            let bound = kernel.sigma * hn_norm_sq(&c, &g).unwrap().sqrt();
            worst = worst.max(sup / bound);
            ensure(sup <= bound * (1.0 + 1e-8), || format!("N={n}: sup {sup} > bound {bound}"))?;
        }
    }
    Ok(format!("600 vectors, max sup/(sigma*norm) = {worst:.3e}"))
}

/// Exhaustive active-set enumeration: every choice of active side per row,
/// KKT system solved by LU, keeps the primal- and dual-feasible candidate.
fn enumeration_oracle(qp: &QpProblem) -> Option<DVector<f64>> {
    let n = qp.dim();
    let h = qp.gram.jittered().try_inverse().expect("gram is invertible");
    let rows = qp.ineq.rows();
    let m = rows.len();
    let allowed: Vec<Vec<u8>> = rows
        .iter()
        .map(|r| {
            let mut v = vec![0];
            if r.lower.is_finite() {
                v.push(1);
            }
            if r.upper.is_finite() {
                v.push(2);
            }
            v
        })
        .collect();
    let mut pos = vec![0usize; m];
    let mut state = vec![0u8; m];
    loop {
        // 0 inactive, 1 lower active, 2 upper active
        let mut a_rows: Vec<(Vec<(usize, f64)>, f64)> = qp
            .eq_indices
            .iter()
            .zip(&qp.eq_values)
            .map(|(&k, &y)| (vec![(k, 1.0)], y))
            .collect();
        let n_eq = a_rows.len();
        let mut active = Vec::new();
        for (i, &s) in state.iter().enumerate() {
            match s {
                1 => {
                    a_rows.push((rows[i].coeffs.clone(), rows[i].lower));
                    active.push((i, 1.0));
                }
                2 => {
                    a_rows.push((rows[i].coeffs.clone(), rows[i].upper));
                    active.push((i, -1.0));
                }
                _ => {}
            }
        }
        let k = a_rows.len();
        if k <= n {
            let mut kkt = DMatrix::zeros(n + k, n + k);
            let mut rhs = DVector::zeros(n + k);
            kkt.view_mut((0, 0), (n, n)).copy_from(&h);
            for (r, (coeffs, b)) in a_rows.iter().enumerate() {
                for &(j, g) in coeffs {
                    kkt[(n + r, j)] = g;
                    kkt[(j, n + r)] = -g;
                }
                rhs[n + r] = *b;
            }
            if let Some(sol) = kkt.lu().solve(&rhs) {
                let c: Vec<f64> = sol.rows(0, n).iter().copied().collect();
                // H c = Aᵀ λ; a lower-active row needs λ ≥ 0, an upper one λ ≤ 0
                let dual_ok = active
                    .iter()
                    .enumerate()
                    .all(|(r, &(_, sign))| sign * sol[n + n_eq + r] >= -1e-9 * sol.amax().max(1.0));
                let primal_ok = rows.iter().all(|row| {
                    let v = row.apply(&c);
                    row.violation(v) <= 1e-9 * v.abs().max(1.0)
                });
                if dual_ok && primal_ok && sol.iter().all(|v| v.is_finite()) {
                    return Some(DVector::from_vec(c));
                }
            }
        }
        // advance the mixed-radix counter over allowed states
        let mut i = 0;
        loop {
            if i == m {
                return None;
            }
            pos[i] += 1;
            if pos[i] < allowed[i].len() {
                state[i] = allowed[i][pos[i]];
                break;
            }
            pos[i] = 0;
            state[i] = 0;
            i += 1;
        }
    }
}

/// Projected gradient on the free coordinates of a box problem, iterated
/// until an iteration moves no coordinate by more than `1e-12`.
fn projected_gradient_oracle(qp: &QpProblem, lo: f64, hi: f64) -> DVector<f64> {
    let n = qp.dim();
    let h = qp.gram.jittered().try_inverse().expect("gram is invertible");
    let mut x = DVector::zeros(n);
    let mut fixed = vec![false; n];
    for (&k, &y) in qp.eq_indices.iter().zip(&qp.eq_values) {
        x[k] = y;
        fixed[k] = true;
    }
    let lipschitz = h.clone().symmetric_eigen().eigenvalues.max();
    let step = 1.0 / lipschitz;
    for _ in 0..5_000_000 {
        let grad = &h * &x;
        let mut change = 0.0_f64;
        for j in 0..n {
            if fixed[j] {
                continue;
            }
            let v = (x[j] - step * grad[j]).clamp(lo, hi);
            change = change.max((v - x[j]).abs());
            x[j] = v;
        }
        if change <= 1e-12 {
            break;
        }
    }
    x
}

fn corpus() -> Vec<(String, QpProblem, Option<(f64, f64)>)> {
    let kernel = se();
    let mut out = Vec::new();
    let three = Partition::from_knots(vec![0.0, 0.5, 1.0]).unwrap();
    let d = DesignData::new(vec![0.5], vec![10.0]).unwrap();
    let spec = ConstraintSpec::Bounds { a: 0.0, b: f64::INFINITY };
    out.push(("single datum, c >= 0".to_string(), build_problem(&d, &[spec], &three, &kernel).unwrap(), Some((0.0, f64::INFINITY))));

    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let families: [(&str, usize); 5] = [("bounds", 6), ("monotone", 6), ("convex", 6), ("bounds+monotone", 3), ("bounds+convex", 3)];
    for (family, max_n) in families {
        for rep in 0..12 {
            let n = rng.random_range(2..=max_n);
            let p = Partition::uniform(n).unwrap();
            let n_data = rng.random_range(1..=2.min(n + 1));
            let mut idx: Vec<usize> = (0..=n).collect();
            for i in 0..n_data {
                let j = rng.random_range(i..=n);
                idx.swap(i, j);
            }
            let mut idx: Vec<usize> = idx[..n_data].to_vec();
            idx.sort_unstable();
            let points: Vec<f64> = idx.iter().map(|&i| p.knots()[i]).collect();
            let mut values: Vec<f64> = (0..n_data).map(|_| rng.random_range(-15.0..15.0)).collect();
            if family.contains("monotone") {
                values.sort_by(|a, b| a.partial_cmp(b).unwrap());
            }
            let (a, b) = (rng.random_range(-20.0..-15.0), rng.random_range(15.0..20.0));
            let mut specs = Vec::new();
            if family.contains("bounds") {
                specs.push(ConstraintSpec::bounds(a, b).unwrap());
            }
            if family.contains("monotone") {
                specs.push(ConstraintSpec::Monotone);
            }
            if family.contains("convex") {
                specs.push(ConstraintSpec::Convex);
            }
            let data = DesignData::new(points, values).unwrap();
            let qp = build_problem(&data, &specs, &p, &kernel).unwrap();
            let bx = (family == "bounds").then_some((a, b));
            out.push((format!("{family} #{rep} (N={n})"), qp, bx));
        }
    }
    out
}

fn c4_map_oracle() -> Outcome {
    let mut worst = 0.0_f64;
    let mut count = 0;
    let mut infeasible = 0;
    for (name, qp, bx) in corpus() {
        let sol = solve_map(&qp, DEFAULT_TOL, qp.default_max_iter()).map_err(|e| e.to_string())?;
        let oracle = enumeration_oracle(&qp);
        match (sol.status, &oracle) {
            (MapStatus::Optimal, Some(c)) => {
                let diff = (DVector::from_column_slice(sol.coef.values()) - c).amax();
                worst = worst.max(diff);
                ensure(diff <= 1e-6, || format!("{name}: enumeration differs by {diff:e}"))?;
                if let Some((lo, hi)) = bx {
                    let pg = projected_gradient_oracle(&qp, lo, hi);
                    let diff = (DVector::from_column_slice(sol.coef.values()) - pg).amax();
                    worst = worst.max(diff);
                    ensure(diff <= 1e-6, || format!("{name}: projected gradient differs by {diff:e}"))?;
                }
            }
            (MapStatus::Infeasible, None) => infeasible += 1,
            (status, _) => {
                return Err(format!("{name}: solver {status:?}, oracle {}", if oracle.is_some() { "feasible" } else { "infeasible" }));
            }
        }
        count += 1;
    }
    Ok(format!("{count} problems ({infeasible} infeasible), max componentwise gap {worst:.1e}"))
}

fn c5_figure2() -> Outcome {
    let r = compute_figure(&config("fig2")).map_err(|e| e.to_string())?;
    ensure(r.kriging_strictly_feasible(), || "kriging mean is not strictly feasible".into())?;
    let gap = r.sup_map_minus_kriging_projected();
    ensure(gap <= 1e-6 * 25.0, || format!("sup |MAP - kriging| = {gap:e}"))?;
    Ok(format!("sup |MAP - kriging| = {gap:.2e} <= {:.1e}", 1e-6 * 25.0))
}

fn c6_figure1() -> Outcome {
    let r = compute_figure(&config("fig1")).map_err(|e| e.to_string())?;
    let bounds = ConstraintSpec::bounds(-25.0, 20.0).unwrap();
    ensure(r.map_curve.len() == 2001, || "grid is not 2001 points".into())?;
    ensure(bounds.holds_on_samples(&r.grid, &r.map_curve, 1e-8), || "MAP violates bounds on the grid".into())?;
    let batch = r.batch.as_ref().ok_or("no draws")?;
    ensure(batch.draws.len() == 100, || format!("{} draws", batch.draws.len()))?;
    for d in &batch.draws {
        ensure(d.values().iter().all(|&v| (-25.0..=20.0).contains(&v)), || "draw violates bounds".into())?;
    }
    let s = r.summary.as_ref().ok_or("no summary")?;
    let separated = (0..r.grid.len())
        .filter(|&i| (s.mean[i] - r.map_curve[i]).abs() > 3.0 * s.mcse[i])
        .count();
    ensure(separated >= 1, || "posterior mean never separates from MAP".into())?;
    let overshoot = r.kriging.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    Ok(format!(
        "MAP in bounds, 100/100 draws in bounds, mean vs MAP > 3 MCSE at {separated} points, kriging max {overshoot:.2}"
    ))
}

fn c7_figure3() -> Outcome {
    let r = compute_figure(&config("fig3")).map_err(|e| e.to_string())?;
    let s = r.summary.as_ref().ok_or("no summary")?;
    ensure(s.mean.len() == r.grid.len(), || "summary size".into())?;
    let floor = 1e-6 * 25.0;
    let mut worst = 0.0_f64;
    for i in 0..r.grid.len() {
        let tol = 3.0 * s.mcse[i] + floor;
        let k = r.kriging_projected[i];
        let m = r.map_curve[i];
        let p = s.mean[i];
        let gap = (k - m).abs().max((k - p).abs()).max((m - p).abs());
        worst = worst.max(gap / tol);
        ensure(gap <= tol, || format!("x = {}: kriging {k}, MAP {m}, mean {p}, 3 MCSE {}", r.grid[i], 3.0 * s.mcse[i]))?;
    }
    Ok(format!("max pairwise gap / (3 MCSE + 1e-6 sigma) = {worst:.3}"))
}

fn c8_convergence() -> Outcome {
    let cfg = config("fig1");
    let report = convergence_ladder(&cfg.data, &cfg.constraints, &cfg.kernel, &[25, 50, 100, 200], 2001, true)
        .map_err(|e| e.to_string())?;
    let g = &report.sup_gaps;
    ensure(g.len() == 3, || "expected three gaps".into())?;
    ensure(g[2] < g[1], || format!("sup gaps {g:?} do not decrease over the last two pairs"))?;
    ensure(report.objectives_bounded_by_finest(1e-6), || format!("objectives {:?} exceed the finest", report.objectives))?;
    Ok(format!("sup gaps {:.3e} {:.3e} {:.3e}; objectives {:?}", g[0], g[1], g[2], report.objectives.iter().map(|o| format!("{o:.6}")).collect::<Vec<_>>()))
}

fn c9_h2() -> Outcome {
    let ladder = Partition::uniform(4).unwrap().dyadic_ladder(5);
    let bounded = vec![
        NamedFunction::new("sin", |x: f64| (6.0 * x).sin()),
        NamedFunction::new("cos", |x: f64| (3.0 * x).cos()),
        NamedFunction::new("tanh", |x: f64| (10.0 * (x - 0.5)).tanh()),
        NamedFunction::new("gauss", |x: f64| (-20.0 * (x - 0.3) * (x - 0.3)).exp()),
        NamedFunction::new("poly", |x: f64| 4.0 * x * (1.0 - x)),
        NamedFunction::new("zero", |_| 0.0),
        NamedFunction::new("touch_upper", |x: f64| 1.0 - (x - 0.5).abs()),
        NamedFunction::new("touch_lower", |x: f64| -1.0 + x * x),
        NamedFunction::new("saw", |x: f64| (7.0 * x).fract() * 2.0 - 1.0),
        NamedFunction::new("sin_prod", |x: f64| (5.0 * x).sin() * (11.0 * x).cos()),
    ];
    let monotone = vec![
        NamedFunction::new("identity", |x: f64| x),
        NamedFunction::new("cube", |x: f64| x * x * x),
        NamedFunction::new("exp", |x: f64| x.exp()),
        NamedFunction::new("tanh", |x: f64| (10.0 * (x - 0.5)).tanh()),
        NamedFunction::new("log1p", |x: f64| x.ln_1p()),
        NamedFunction::new("sqrt", |x: f64| x.sqrt()),
        NamedFunction::new("atan", |x: f64| (20.0 * x - 7.0).atan()),
        NamedFunction::new("step", |x: f64| if x < 0.4 { 0.0 } else { 1.0 }),
        NamedFunction::new("constant", |_| 3.0),
        NamedFunction::new("erf_like", |x: f64| 1.0 / (1.0 + (-15.0 * (x - 0.6)).exp())),
    ];
    let convex = vec![
        NamedFunction::new("square", |x: f64| x * x),
        NamedFunction::new("exp", |x: f64| x.exp()),
        NamedFunction::new("cosh", |x: f64| (3.0 * (x - 0.4)).cosh()),
        NamedFunction::new("quartic", |x: f64| (x - 0.5).powi(4)),
        NamedFunction::new("neg_log", |x: f64| -(x + 0.1).ln()),
        NamedFunction::new("abs", |x: f64| (x - 0.3).abs()),
        NamedFunction::new("hinge", |x: f64| (x - 0.5).max(0.0)),
        NamedFunction::new("reciprocal", |x: f64| 1.0 / (1.0 + x)),
        NamedFunction::new("linear", |x: f64| 2.0 - 3.0 * x),
        NamedFunction::new("exp_neg", |x: f64| (-4.0 * x).exp()),
    ];
    let mut checks = 0;
    for (spec, fs) in [
        (ConstraintSpec::bounds(-1.0, 1.0).unwrap(), &bounded),
        (ConstraintSpec::Monotone, &monotone),
        (ConstraintSpec::Convex, &convex),
    ] {
        let grid = uniform_grid(10_001);
        for f in fs.iter() {
            let ys: Vec<f64> = grid.iter().map(|&x| (f.f)(x)).collect();
            ensure(spec.holds_on_samples(&grid, &ys, 1e-9), || format!("{} is not in {spec:?}", f.name))?;
        }
        let report = check_h2(&spec, fs, &ladder);
        ensure(report.is_clean(), || format!("{spec:?}: {:?}", report.violations))?;
        checks += report.checks;
    }
    Ok(format!("{checks} projections, 0 violations at 1e-12"))
}

fn c10_infeasible() -> Outcome {
    let kernel = se();
    let bounds = ConstraintSpec::bounds(-25.0, 20.0).unwrap();
    let cases = [
        (vec![0.5], vec![30.0], bounds),
        (vec![0.06, 0.5], vec![-30.0, 0.0], bounds),
        (vec![0.2, 0.8], vec![5.0, 1.0], ConstraintSpec::Monotone),
    ];
    for n in [4, 50] {
        let p = Partition::uniform(n).unwrap();
        for (points, values, spec) in &cases {
            let d = DesignData::new(points.clone(), values.clone()).unwrap();
            let qp = build_problem(&d, &[*spec], &p, &kernel).map_err(|e| e.to_string())?;
            let sol = solve_map(&qp, DEFAULT_TOL, qp.default_max_iter()).map_err(|e| e.to_string())?;
            ensure(sol.status == MapStatus::Infeasible, || {
                format!("data {points:?}/{values:?} with {spec:?} on N={n}: status {:?}", sol.status)
            })?;
        }
    }
    Ok("out-of-bounds and order-violating data report Infeasible".into())
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome, u64); 10] = [
        ("1 norm ladder monotone and bounded", c1_norm_monotonicity, 10),
        ("2 block-matrix lemma", c2_block_lemma, 5),
        ("3 uniform bound", c3_uniform_bound, 10),
        ("4 MAP equals oracle for N <= 6", c4_map_oracle, 30),
        ("5 figure 2: MAP = kriging", c5_figure2, 5),
        ("6 figure 1: bounded MAP and draws", c6_figure1, 60),
        ("7 figure 3: kriging, MAP, mean agree", c7_figure3, 120),
        ("8 convergence ladder", c8_convergence, 120),
        ("9 (H2) projection preserves families", c9_h2, 5),
        ("10 infeasibility contract", c10_infeasible, 1),
    ];
    let mut failed = 0;
    for (name, run, limit) in criteria {
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(run).unwrap_or_else(|_| Err("panicked".into()));
        let elapsed = start.elapsed();
        let outcome = match outcome {
            Ok(msg) if elapsed > Duration::from_secs(limit) => Err(format!("{msg}; took {elapsed:.2?} > {limit} s")),
            other => other,
        };
        match outcome {
            Ok(msg) => println!("PASS [{name}] ({elapsed:.2?}) {msg}"),
            Err(msg) => {
                failed += 1;
                println!("FAIL [{name}] ({elapsed:.2?}) {msg}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", 10 - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
