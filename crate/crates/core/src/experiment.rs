//! End-to-end figure experiments: kriging, MAP along a partition ladder,
//! posterior sampling, and CSV/JSON artifacts tied together by a manifest.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::map::{build_problem, convergence_ladder, sup_diff, ConvergenceReport, MapStatus, QpProblem};
use crate::partition::{project, uniform_grid, Partition};
use crate::rkhs::KrigingModel;
use crate::sampler::{condition_on_data, posterior_summary, sample, PosteriorSummary, SampleBatch, SamplerOptions};

/// In-memory results of one figure experiment.
#[derive(Debug, Clone)]
pub struct FigureResult {
    pub config: ExperimentConfig,
    pub grid: Vec<f64>,
    /// Smooth unconstrained posterior mean.
    pub kriging: Vec<f64>,
    /// Kriging mean interpolated at the knots of the finest partition, the
    /// unconstrained mean of the finite-dimensional model.
    pub kriging_projected: Vec<f64>,
    pub report: ConvergenceReport,
    /// Finest-level MAP on the grid.
    pub map_curve: Vec<f64>,
    pub problem: QpProblem,
    pub batch: Option<SampleBatch>,
    pub summary: Option<PosteriorSummary>,
}

impl FigureResult {
    /// Largest violation of the constraint families by the finest MAP on
    /// the grid, measured on the knot encoding (exact for piecewise-linear
    /// curves).
    pub fn map_max_violation(&self) -> f64 {
        let coef = &self.report.finest().expect("ladder is not empty").coef;
        self.problem
            .ineq
            .max_violation(coef.values())
            .expect("solution has one value per knot")
    }

    /// Whether the projected kriging mean satisfies every constraint row
    /// with strictly positive slack.
    pub fn kriging_strictly_feasible(&self) -> bool {
        let p = self.problem.partition.clone();
        let model = KrigingModel::fit(&self.config.data, &self.config.kernel).expect("data fitted before");
        let c = project(|x| model.predict(x), &p);
        self.problem.ineq.rows().iter().all(|r| {
            let v = r.apply(c.values());
            v > r.lower && v < r.upper
        })
    }

    pub fn sup_map_minus_kriging_projected(&self) -> f64 {
        sup_diff(&self.map_curve, &self.kriging_projected)
    }
}

/// Runs the numerical part of an experiment without touching the disk.
pub fn compute_figure(cfg: &ExperimentConfig) -> Result<FigureResult> {
    cfg.validate()?;
    let grid = uniform_grid(cfg.grid);
    let model = KrigingModel::fit(&cfg.data, &cfg.kernel)?;
    let kriging = model.predict_many(&grid);

    let report = convergence_ladder(&cfg.data, &cfg.constraints, &cfg.kernel, &cfg.levels, cfg.grid, false)?;
    let finest = report.finest().expect("ladder is not empty");
    match finest.status {
        MapStatus::Optimal => {}
        MapStatus::Infeasible => return Err(Error::Infeasible),
        MapStatus::MaxIter => {
            return Err(Error::MaxIter {
                iterations: finest.iterations,
            })
        }
    }
    let map_curve = finest.coef.evaluate_many(&grid)?;

    let base = Partition::uniform(cfg.finest_level())?;
    let problem = build_problem(&cfg.data, &cfg.constraints, &base, &cfg.kernel)?;
    let partition: Arc<Partition> = problem.partition.clone();
    let kriging_projected = project(|x| model.predict(x), &partition).evaluate_many(&grid)?;

    let (batch, summary) = if cfg.n_samples > 0 {
        let cg = condition_on_data(&problem)?;
        let batch = sample(&cg, &problem.ineq, cfg.n_samples, cfg.seed, &SamplerOptions::default())?;
        let summary = posterior_summary(&batch, &grid)?;
        (Some(batch), Some(summary))
    } else {
        (None, None)
    };

    Ok(FigureResult {
        config: cfg.clone(),
        grid,
        kriging,
        kriging_projected,
        report,
        map_curve,
        problem,
        batch,
        summary,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub file: String,
    pub rows: usize,
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub name: String,
    pub schema_version: u32,
    pub config_sha256: String,
    pub crate_version: String,
    pub seed: u64,
    pub files: Vec<ManifestEntry>,
}

/// Hex SHA-256 of the canonical TOML serialization of the config, with the
/// output directory blanked so relocated runs hash alike.
pub fn config_hash(cfg: &ExperimentConfig) -> Result<String> {
    let mut canonical = cfg.clone();
    canonical.out = PathBuf::new();
    let digest = Sha256::digest(canonical.to_toml_string()?.as_bytes());
    Ok(digest.iter().fold(String::with_capacity(64), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    }))
}

struct Writer<'a> {
    dir: &'a Path,
    files: Vec<ManifestEntry>,
}

impl Writer<'_> {
    /// Writes a CSV with a header and one line per row.
    fn csv(&mut self, file: &str, description: &str, header: &str, rows: &[String]) -> Result<()> {
        let mut text = String::with_capacity(rows.len() * 32);
        text.push_str(header);
        text.push('\n');
        for r in rows {
            text.push_str(r);
            text.push('\n');
        }
        fs::write(self.dir.join(file), text)?;
        self.files.push(ManifestEntry {
            file: file.into(),
            rows: rows.len(),
            description: description.into(),
        });
        Ok(())
    }

    fn json<T: Serialize>(&mut self, file: &str, description: &str, value: &T) -> Result<()> {
        fs::write(self.dir.join(file), serde_json::to_string_pretty(value)?)?;
        self.files.push(ManifestEntry {
            file: file.into(),
            rows: 1,
            description: description.into(),
        });
        Ok(())
    }
}

#[derive(Serialize)]
struct SolutionMeta<'a> {
    n_cells: usize,
    knots: &'a [f64],
    knot_values: &'a [f64],
    data_knots: &'a [f64],
    status: String,
    objective: f64,
    iterations: usize,
    jitter: f64,
    kkt: crate::map::KktResiduals,
    active_rows: usize,
    min_slack: Option<f64>,
    map_max_violation: f64,
    kriging_strictly_feasible: bool,
    sup_map_minus_kriging_projected: f64,
}

/// Writes every artifact of `result` into `dir` and returns the manifest.
pub fn write_figure(result: &FigureResult, dir: &Path) -> Result<Manifest> {
    fs::create_dir_all(dir)?;
    let mut w = Writer {
        dir,
        files: Vec::new(),
    };
    let cfg = &result.config;

    fs::write(dir.join("config.toml"), cfg.to_toml_string()?)?;
    w.files.push(ManifestEntry {
        file: "config.toml".into(),
        rows: 1,
        description: "resolved configuration".into(),
    });

    let rows: Vec<String> = (0..result.grid.len())
        .map(|i| format!("{},{},{}", result.grid[i], result.kriging[i], result.kriging_projected[i]))
        .collect();
    w.csv(
        "kriging.csv",
        "unconstrained mean, smooth and interpolated at the finest knots",
        "x,kriging,kriging_projected",
        &rows,
    )?;

    for (sol, n) in result.report.solutions.iter().zip(&result.report.levels) {
        let curve = sol.coef.evaluate_many(&result.grid)?;
        let rows: Vec<String> = result
            .grid
            .iter()
            .zip(&curve)
            .map(|(x, v)| format!("{x},{v}"))
            .collect();
        w.csv(&format!("map_curve_N{n}.csv"), "MAP estimate on the grid", "x,map", &rows)?;
    }

    let report = &result.report;
    let rows: Vec<String> = report
        .per_level
        .iter()
        .enumerate()
        .map(|(i, l)| {
            let gap = report.sup_gaps.get(i).map(|g| g.to_string()).unwrap_or_default();
            format!(
                "{},{},{},{},{},{},{},{},{}",
                report.levels[i],
                l.n_cells,
                l.n_knots,
                l.objective,
                gap,
                report.kriging_gaps[i],
                l.iterations,
                l.jitter,
                l.kkt.max()
            )
        })
        .collect();
    w.csv(
        "convergence.csv",
        "MAP per level; sup_gap_next compares with the next level",
        "N,n_cells,n_knots,objective,sup_gap_next,kriging_gap,iterations,jitter,kkt_max",
        &rows,
    )?;

    let finest = report.finest().expect("ladder is not empty");
    let part = finest.coef.partition();
    w.json(
        "solution_meta.json",
        "finest-level MAP solution and diagnostics",
        &SolutionMeta {
            n_cells: part.n_cells(),
            knots: part.knots(),
            knot_values: finest.coef.values(),
            data_knots: &result.problem.data_knots,
            status: format!("{:?}", finest.status),
            objective: finest.objective,
            iterations: finest.iterations,
            jitter: finest.jitter,
            kkt: finest.kkt,
            active_rows: finest.active_rows.len(),
            min_slack: finest.min_slack,
            map_max_violation: result.map_max_violation(),
            kriging_strictly_feasible: result.kriging_strictly_feasible(),
            sup_map_minus_kriging_projected: result.sup_map_minus_kriging_projected(),
        },
    )?;

    if let (Some(batch), Some(s)) = (&result.batch, &result.summary) {
        let mut rows = Vec::with_capacity(batch.draws.len() * part.len());
        for (d, draw) in batch.draws.iter().enumerate() {
            for (k, (x, v)) in draw.partition().knots().iter().zip(draw.values()).enumerate() {
                rows.push(format!("{d},{k},{x},{v}"));
            }
        }
        w.csv(
            "paths.csv",
            "posterior draws as knot values (curves are their linear interpolants)",
            "draw,knot,x,value",
            &rows,
        )?;
        let rows: Vec<String> = (0..s.grid.len())
            .map(|i| {
                format!(
                    "{},{},{},{},{},{}",
                    s.grid[i], s.mean[i], s.sd[i], s.mcse[i], s.q025[i], s.q975[i]
                )
            })
            .collect();
        w.csv(
            "summary.csv",
            "pointwise posterior mean, sd, Monte-Carlo standard error and 95% band",
            "x,mean,sd,mcse,q025,q975",
            &rows,
        )?;
        w.json("sampler_meta.json", "sampler provenance", batch)?;
    }

    let manifest = Manifest {
        name: cfg.name.clone(),
        schema_version: cfg.schema_version,
        config_sha256: config_hash(cfg)?,
        crate_version: env!("CARGO_PKG_VERSION").into(),
        seed: cfg.seed,
        files: w.files,
    };
    fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(manifest)
}

/// Computes and writes one experiment into `cfg.out`.
pub fn run_figure_experiment(cfg: &ExperimentConfig) -> Result<(FigureResult, Manifest)> {
    let result = compute_figure(cfg)?;
    let manifest = write_figure(&result, &cfg.out)?;
    log::info!("{}: wrote {} files to {}", cfg.name, manifest.files.len(), cfg.out.display());
    Ok((result, manifest))
}

/// Runs several experiments, optionally one thread each. Output
/// directories must be distinct.
pub fn run_figure_experiments(cfgs: &[ExperimentConfig], parallel: bool) -> Result<Vec<Manifest>> {
    let mut dirs: Vec<&PathBuf> = cfgs.iter().map(|c| &c.out).collect();
    dirs.sort();
    if dirs.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::InvalidInput("experiments must use distinct output directories".into()));
    }
    if parallel {
        std::thread::scope(|scope| {
            let handles: Vec<_> = cfgs
                .iter()
                .map(|c| scope.spawn(move || run_figure_experiment(c).map(|r| r.1)))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("experiment thread panicked"))
                .collect()
        })
    } else {
        cfgs.iter().map(|c| run_figure_experiment(c).map(|r| r.1)).collect()
    }
}

/// Checks that every file in the manifest exists with the declared number
/// of data rows.
pub fn verify_manifest(dir: &Path) -> Result<Manifest> {
    let manifest: Manifest = serde_json::from_str(&fs::read_to_string(dir.join("manifest.json"))?)?;
    for f in &manifest.files {
        let content = fs::read_to_string(dir.join(&f.file))?;
        if f.file.ends_with(".csv") {
            let found = content.lines().count().saturating_sub(1);
            if found != f.rows {
                return Err(Error::InvalidInput(format!(
                    "{}: manifest declares {} rows, found {found}",
                    f.file, f.rows
                )));
            }
        }
    }
    Ok(manifest)
}
