//! Seeded self-check of the library invariants, run by the `check`
//! subcommand and in CI.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::constraints::{check_h2, encode, ConstraintSpec, NamedFunction};
use crate::kernel::{GramMatrix, Kernel};
use crate::map::{build_problem, solve_map, MapStatus, DEFAULT_TOL};
use crate::partition::{project, uniform_grid, CoefVector, Partition};
use crate::rkhs::{check_block_lemma, hn_norm_sq, norm_ladder, DesignData};
use crate::sampler::{condition_on_data, sample, SamplerOptions};

/// Deliberate defects used to check that the suite catches regressions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mutation {
    /// Reverses the inequality tested by the block-matrix lemma.
    BlockLemmaSignFlip,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PropertyResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteReport {
    pub seed: u64,
    pub passed: bool,
    pub properties: Vec<PropertyResult>,
}

impl SuiteReport {
    pub fn failures(&self) -> impl Iterator<Item = &PropertyResult> {
        self.properties.iter().filter(|p| !p.passed)
    }
}

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn se() -> Kernel {
    Kernel::squared_exponential(25.0, 0.2).expect("valid kernel")
}

fn kernel_symmetry(rng: &mut ChaCha8Rng) -> Check {
    for _ in 0..500 {
        let (x, y) = (rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
        let sigma = rng.random_range(0.1..30.0);
        let theta = rng.random_range(0.01..2.0);
        for k in [
            Kernel::squared_exponential(sigma, theta).map_err(|e| e.to_string())?,
            Kernel::matern52(sigma, theta).map_err(|e| e.to_string())?,
        ] {
            ensure(k.evaluate(x, y) == k.evaluate(y, x), || format!("{k:?} asymmetric at ({x}, {y})"))?;
            ensure(k.evaluate(x, y).abs() <= k.variance(), || format!("{k:?} exceeds variance"))?;
        }
    }
    Ok("500 pairs, both families".into())
}

fn gram_positive_definite(rng: &mut ChaCha8Rng) -> Check {
    for _ in 0..50 {
        let n = rng.random_range(2..60);
        let mut pts: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        pts.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
        pts.dedup();
        let g = GramMatrix::new(&se(), &pts).map_err(|e| e.to_string())?;
        let l = g.factor().lower();
        ensure((0..pts.len()).all(|i| l[(i, i)] > 0.0), || "non-positive pivot".into())?;
        ensure(g.jitter_applied() <= 1e-6 * 625.0, || "jitter above cap".into())?;
    }
    Ok("50 random point sets".into())
}

fn partition_of_unity(rng: &mut ChaCha8Rng) -> Check {
    for _ in 0..50 {
        let n = rng.random_range(1..40);
        let mut knots: Vec<f64> = (0..n).map(|_| rng.random_range(0.01..0.99)).collect();
        knots.extend([0.0, 1.0]);
        knots.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
        knots.dedup_by(|a, b| (*a - *b).abs() < 1e-6);
        let p = Partition::from_knots(knots).map_err(|e| e.to_string())?;
        for _ in 0..20 {
            let x = rng.random::<f64>();
            let s: f64 = (0..p.len()).map(|j| p.hat(j, x)).sum();
            ensure((s - 1.0).abs() <= 1e-14, || format!("sum of hats at {x} is {s}"))?;
        }
    }
    Ok("1000 evaluations".into())
}

fn projection_reproduces_knots(rng: &mut ChaCha8Rng) -> Check {
    let p = Arc::new(Partition::uniform(rng.random_range(2..64)).map_err(|e| e.to_string())?);
    let a = rng.random_range(1.0..10.0);
    let c = project(|x| (a * x).sin(), &p);
    for (&t, &v) in p.knots().iter().zip(c.values()) {
        let at = c.evaluate(t).map_err(|e| e.to_string())?;
        ensure(at == v, || format!("knot {t}: {at} != {v}"))?;
    }
    Ok(format!("{} knots", p.len()))
}

fn norm_ladder_monotone(rng: &mut ChaCha8Rng) -> Check {
    let kernel = se();
    let ladder = Partition::uniform(4).map_err(|e| e.to_string())?.dyadic_ladder(3);
    let s = ladder[0].knots().to_vec();
    let gs = kernel.cross(&s, &s);
    for _ in 0..5 {
        let a = DVector::from_fn(s.len(), |_, _| rng.random_range(-1.0..=1.0));
        let exact = (a.transpose() * &gs * &a)[(0, 0)];
        let f = |x: f64| s.iter().zip(a.iter()).map(|(&si, &ai)| ai * kernel.evaluate(x, si)).sum::<f64>();
        let seq = norm_ladder(f, &ladder, &kernel).map_err(|e| e.to_string())?;
        ensure(seq.is_non_decreasing(1e-8), || format!("not monotone: {:?}", seq.values))?;
        let last = seq.last().unwrap_or(0.0);
        ensure(last <= exact * (1.0 + 1e-6), || format!("{last} exceeds {exact}"))?;
    }
    Ok("5 functions, N = 4..32".into())
}

fn block_lemma(rng: &mut ChaCha8Rng, mutation: Option<Mutation>) -> Check {
    let flip = mutation == Some(Mutation::BlockLemmaSignFlip);
    for _ in 0..200 {
        let n = rng.random_range(2..=12);
        let m = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..=1.0));
        let b = &m * m.transpose() + DMatrix::identity(n, n) * 1e-3;
        let y = DVector::from_fn(n, |_, _| rng.random_range(-1.0..=1.0));
        let (full, lead) = check_block_lemma(&b, &y).map_err(|e| e.to_string())?;
        let holds = if flip {
            lead >= full - 1e-10 * full.abs()
        } else {
            full >= lead - 1e-10 * lead.abs()
        };
        ensure(holds, || format!("n = {n}: full {full}, leading block {lead}"))?;
    }
    Ok("200 random SPD matrices".into())
}

fn uniform_bound(rng: &mut ChaCha8Rng) -> Check {
    let kernel = se();
    let grid = uniform_grid(2001);
    for n in [8, 32] {
        let p = Arc::new(Partition::uniform(n).map_err(|e| e.to_string())?);
        let g = GramMatrix::new(&kernel, p.knots()).map_err(|e| e.to_string())?;
        for _ in 0..25 {
            let values = (0..p.len()).map(|_| rng.random_range(-1.0..=1.0)).collect();
            let c = CoefVector::new(Arc::clone(&p), values).map_err(|e| e.to_string())?;
            let sup = c
                .evaluate_many(&grid)
                .map_err(|e| e.to_string())?
                .iter()
                .fold(0.0_f64, |m, v| m.max(v.abs()));
            let bound = kernel.sigma * hn_norm_sq(&c, &g).map_err(|e| e.to_string())?.sqrt();
            ensure(sup <= bound * (1.0 + 1e-8), || format!("N = {n}: {sup} > {bound}"))?;
        }
    }
    Ok("50 vectors".into())
}

fn encoding_exactness(rng: &mut ChaCha8Rng) -> Check {
    let p = Arc::new(Partition::uniform(12).map_err(|e| e.to_string())?);
    let grid = uniform_grid(1201);
    let specs = [ConstraintSpec::Bounds { a: -1.0, b: 1.0 }, ConstraintSpec::Monotone, ConstraintSpec::Convex];
    for _ in 0..200 {
        let mut v: Vec<f64> = (0..p.len()).map(|_| rng.random_range(-1.2..1.2)).collect();
        if rng.random::<bool>() {
            v.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
        }
        let c = CoefVector::new(Arc::clone(&p), v).map_err(|e| e.to_string())?;
        let ys = c.evaluate_many(&grid).map_err(|e| e.to_string())?;
        for spec in &specs {
            let by_rows = encode(spec, &p).is_feasible(c.values(), 0.0).map_err(|e| e.to_string())?;
            // on the dense grid only the knot-level kinks matter for convexity
            let by_samples = match spec {
                ConstraintSpec::Convex => spec.holds_on_samples(p.knots(), c.values(), 0.0),
                _ => spec.holds_on_samples(&grid, &ys, 0.0),
            };
            ensure(by_rows == by_samples, || format!("{spec:?}: rows {by_rows}, samples {by_samples}"))?;
        }
    }
    Ok("200 vectors, 3 families".into())
}

fn h2_preservation(_: &mut ChaCha8Rng) -> Check {
    let ladder = Partition::uniform(4).map_err(|e| e.to_string())?.dyadic_ladder(4);
    let cases = [
        (ConstraintSpec::Bounds { a: -1.0, b: 1.0 }, NamedFunction::new("sin", |x: f64| (9.0 * x).sin())),
        (ConstraintSpec::Monotone, NamedFunction::new("exp", |x: f64| x.exp())),
        (ConstraintSpec::Convex, NamedFunction::new("square", |x: f64| (x - 0.3) * (x - 0.3))),
    ];
    for (spec, f) in cases {
        let report = check_h2(&spec, std::slice::from_ref(&f), &ladder);
        ensure(report.is_clean(), || format!("{spec:?}: {:?}", report.violations))?;
    }
    Ok("3 families, N = 4..64".into())
}

fn map_kkt_and_dominance(rng: &mut ChaCha8Rng) -> Check {
    let kernel = se();
    let p = Partition::uniform(10).map_err(|e| e.to_string())?;
    let spec = ConstraintSpec::bounds(-5.0, 5.0).map_err(|e| e.to_string())?;
    for _ in 0..10 {
        let data = DesignData::new(vec![0.2, 0.5, 0.8], (0..3).map(|_| rng.random_range(-4.9..4.9)).collect())
            .map_err(|e| e.to_string())?;
        let qp = build_problem(&data, &[spec], &p, &kernel).map_err(|e| e.to_string())?;
        let a = solve_map(&qp, DEFAULT_TOL, qp.default_max_iter()).map_err(|e| e.to_string())?;
        let b = solve_map(&qp, DEFAULT_TOL, qp.default_max_iter()).map_err(|e| e.to_string())?;
        ensure(a.status == MapStatus::Optimal, || format!("status {:?}", a.status))?;
        ensure(a.coef.values() == b.coef.values(), || "solve is not deterministic".into())?;
        ensure(a.kkt.max() <= DEFAULT_TOL, || format!("KKT {:?}", a.kkt))?;
        ensure(qp.ineq.is_feasible(a.coef.values(), DEFAULT_TOL).unwrap_or(false), || "MAP infeasible".into())?;
        for _ in 0..10 {
            let mut c: Vec<f64> = (0..qp.dim()).map(|_| rng.random_range(-5.0..=5.0)).collect();
            for (&k, &y) in qp.eq_indices.iter().zip(&qp.eq_values) {
                c[k] = y;
            }
            let other = qp.gram.quad_form(&DVector::from_vec(c));
            ensure(a.objective <= other * (1.0 + 1e-10), || format!("feasible point beats MAP: {other} < {}", a.objective))?;
        }
    }
    Ok("10 problems, 100 feasible competitors".into())
}

fn infeasibility_contract(_: &mut ChaCha8Rng) -> Check {
    let p = Partition::uniform(50).map_err(|e| e.to_string())?;
    let d = DesignData::new(vec![0.5], vec![30.0]).map_err(|e| e.to_string())?;
    let spec = ConstraintSpec::bounds(-25.0, 20.0).map_err(|e| e.to_string())?;
    let qp = build_problem(&d, &[spec], &p, &se()).map_err(|e| e.to_string())?;
    let sol = solve_map(&qp, DEFAULT_TOL, qp.default_max_iter()).map_err(|e| e.to_string())?;
    ensure(sol.status == MapStatus::Infeasible, || format!("status {:?}", sol.status))?;
    Ok("datum 30 above bound 20 is infeasible".into())
}

fn sampler_feasible_and_seeded(rng: &mut ChaCha8Rng) -> Check {
    let p = Partition::uniform(20).map_err(|e| e.to_string())?;
    let d = DesignData::new(vec![0.3, 0.7], vec![1.0, 2.0]).map_err(|e| e.to_string())?;
    let spec = ConstraintSpec::bounds(-3.0, 3.0).map_err(|e| e.to_string())?;
    let qp = build_problem(&d, &[spec], &p, &se()).map_err(|e| e.to_string())?;
    let cg = condition_on_data(&qp).map_err(|e| e.to_string())?;
    let seed = rng.random();
    let opts = SamplerOptions {
        burn_in: 100,
        ..SamplerOptions::default()
    };
    let a = sample(&cg, &qp.ineq, 50, seed, &opts).map_err(|e| e.to_string())?;
    let b = sample(&cg, &qp.ineq, 50, seed, &opts).map_err(|e| e.to_string())?;
    for (x, y) in a.draws.iter().zip(&b.draws) {
        ensure(x.values() == y.values(), || "same seed, different draws".into())?;
        ensure(qp.ineq.is_feasible(x.values(), 1e-9).unwrap_or(false), || "infeasible draw".into())?;
        for (&k, &v) in qp.eq_indices.iter().zip(&qp.eq_values) {
            ensure((x.values()[k] - v).abs() <= 1e-10, || "draw misses datum".into())?;
        }
    }
    Ok(format!("50 draws via {:?}", a.method))
}

type PropertyFn = Box<dyn Fn(&mut ChaCha8Rng) -> Check>;

/// Runs every property with a stream seeded from `seed`. With a
/// `mutation`, the matching property must fail.
pub fn run_property_suite(seed: u64, mutation: Option<Mutation>) -> SuiteReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let checks: Vec<(&str, PropertyFn)> = vec![
        ("kernel_symmetry", Box::new(kernel_symmetry)),
        ("gram_positive_definite", Box::new(gram_positive_definite)),
        ("partition_of_unity", Box::new(partition_of_unity)),
        ("projection_reproduces_knots", Box::new(projection_reproduces_knots)),
        ("norm_ladder_monotone", Box::new(norm_ladder_monotone)),
        ("block_lemma", Box::new(move |r: &mut ChaCha8Rng| block_lemma(r, mutation))),
        ("uniform_bound", Box::new(uniform_bound)),
        ("encoding_exactness", Box::new(encoding_exactness)),
        ("h2_preservation", Box::new(h2_preservation)),
        ("map_kkt_and_dominance", Box::new(map_kkt_and_dominance)),
        ("infeasibility_contract", Box::new(infeasibility_contract)),
        ("sampler_feasible_and_seeded", Box::new(sampler_feasible_and_seeded)),
    ];
    let properties: Vec<PropertyResult> = checks
        .into_iter()
        .map(|(name, check)| {
            let (passed, detail) = match check(&mut rng) {
                Ok(d) => (true, d),
                Err(d) => (false, d),
            };
            PropertyResult {
                name: name.into(),
                passed,
                detail,
            }
        })
        .collect();
    SuiteReport {
        seed,
        passed: properties.iter().all(|p| p.passed),
        properties,
    }
}
