//! `cgp`: constrained GP interpolation experiments from the command line.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use cgp_core::config::ExperimentConfig;
use cgp_core::experiment::{compute_figure, run_figure_experiments, write_figure};
use cgp_core::kernel::Kernel;
use cgp_core::partition::Partition;
use cgp_core::rkhs::{norm_ladder, KrigingModel};
use cgp_core::suite::{run_property_suite, Mutation};
use clap::{Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "cgp", version, about = "Shape-constrained Gaussian-process interpolation")]
struct Cli {
    /// Experiment configuration (TOML); repeatable for `figure`
    #[arg(long, global = true)]
    config: Vec<PathBuf>,
    /// Output directory, overriding the config
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// RNG seed, overriding the config
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Log more (repeat for debug output)
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// MAP estimate along the partition ladder
    Map {
        /// Comma-separated numbers of cells, e.g. 25,50,100,200
        #[arg(long, value_delimiter = ',')]
        levels: Option<Vec<usize>>,
        /// Evaluation grid size
        #[arg(long)]
        grid: Option<usize>,
    },
    /// Posterior draws and pointwise summary on the finest level
    Sample {
        /// Number of draws
        #[arg(long = "n", alias = "n-samples")]
        n_samples: Option<usize>,
        /// Evaluation grid size
        #[arg(long)]
        grid: Option<usize>,
    },
    /// Full figure experiment: kriging, MAP ladder, posterior, manifest
    Figure {
        /// Run several configs concurrently
        #[arg(long)]
        parallel: bool,
    },
    /// Property self-check; exits nonzero on any failure
    Check {
        /// Inject a known defect to confirm the suite catches it
        #[arg(long, value_enum)]
        mutate: Option<MutationArg>,
        /// Print the report as JSON
        #[arg(long)]
        json: bool,
    },
    /// `m_N(f)` along a dyadic ladder, as CSV
    Normladder {
        /// Function to project
        #[arg(long, value_enum, default_value_t = LadderFunction::Kriging)]
        function: LadderFunction,
        /// Coarsest number of cells
        #[arg(long, default_value_t = 4)]
        coarse: usize,
        /// Number of dyadic refinements
        #[arg(long, default_value_t = 5)]
        steps: usize,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum MutationArg {
    BlockLemmaSignFlip,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum LadderFunction {
    /// Kriging mean of the config data (an element of the RKHS)
    Kriging,
    /// Indicator of [0.5, 1] (not in the RKHS: m_N diverges)
    Step,
    /// sin(2πx)
    Sin,
}

fn load_one(cli: &Cli) -> Result<ExperimentConfig> {
    let path = match cli.config.as_slice() {
        [p] => p,
        [] => bail!("--config is required"),
        _ => bail!("this subcommand takes a single --config"),
    };
    let mut cfg = ExperimentConfig::load(path)?;
    apply_overrides(cli, &mut cfg, None);
    Ok(cfg)
}

fn apply_overrides(cli: &Cli, cfg: &mut ExperimentConfig, subdir: Option<&str>) {
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.out = match subdir {
            Some(s) => out.join(s),
            None => out.clone(),
        };
    }
}

fn run(cli: &Cli) -> Result<ExitCode> {
    match &cli.command {
        Command::Map { levels, grid } => {
            let mut cfg = load_one(cli)?;
            if let Some(l) = levels {
                cfg.levels = l.clone();
            }
            if let Some(g) = grid {
                cfg.grid = *g;
            }
            cfg.n_samples = 0;
            cfg.validate()?;
            let result = compute_figure(&cfg)?;
            write_figure(&result, &cfg.out)?;
            let finest = result.report.finest().context("empty ladder")?;
            println!(
                "MAP on N = {}: objective {:.6e}, {} iterations, {} active rows, KKT {:.1e}; wrote {}",
                cfg.finest_level(),
                finest.objective,
                finest.iterations,
                finest.active_rows.len(),
                finest.kkt.max(),
                cfg.out.display()
            );
        }
        Command::Sample { n_samples, grid } => {
            let mut cfg = load_one(cli)?;
            if let Some(n) = n_samples {
                cfg.n_samples = *n;
            }
            if let Some(g) = grid {
                cfg.grid = *g;
            }
            if cfg.n_samples == 0 {
                bail!("n_samples must be positive for `sample`");
            }
            cfg.levels = vec![cfg.finest_level()];
            let result = compute_figure(&cfg)?;
            write_figure(&result, &cfg.out)?;
            let batch = result.batch.as_ref().context("no draws")?;
            println!(
                "{} draws via {:?} (acceptance {:.3}); wrote {}",
                batch.draws.len(),
                batch.method,
                batch.acceptance_rate,
                cfg.out.display()
            );
        }
        Command::Figure { parallel } => {
            if cli.config.is_empty() {
                bail!("--config is required");
            }
            let many = cli.config.len() > 1;
            let cfgs = cli
                .config
                .iter()
                .map(|p| {
                    let mut cfg = ExperimentConfig::load(p)?;
                    let name = cfg.name.clone();
                    apply_overrides(cli, &mut cfg, many.then_some(name.as_str()));
                    Ok(cfg)
                })
                .collect::<Result<Vec<_>>>()?;
            for m in run_figure_experiments(&cfgs, *parallel)? {
                println!("{}: {} files, config sha256 {}", m.name, m.files.len(), m.config_sha256);
            }
        }
        Command::Check { mutate, json } => {
            let mutation = mutate.map(|m| match m {
                MutationArg::BlockLemmaSignFlip => Mutation::BlockLemmaSignFlip,
            });
            let report = run_property_suite(cli.seed.unwrap_or(0), mutation);
            if *json {
                println!("{}", serde_json::to_string_pretty(&report)?);
            } else {
                for p in &report.properties {
                    println!("{} {}: {}", if p.passed { "PASS" } else { "FAIL" }, p.name, p.detail);
                }
                println!("seed {}: {}", report.seed, if report.passed { "all properties hold" } else { "FAILED" });
            }
            if !report.passed {
                return Ok(ExitCode::FAILURE);
            }
        }
        Command::Normladder { function, coarse, steps } => {
            let (kernel, model) = match cli.config.as_slice() {
                [] => (Kernel::squared_exponential(25.0, 0.2)?, None),
                _ => {
                    let cfg = load_one(cli)?;
                    let model = KrigingModel::fit(&cfg.data, &cfg.kernel)?;
                    (cfg.kernel, Some(model))
                }
            };
            let f: Box<dyn Fn(f64) -> f64> = match function {
                LadderFunction::Kriging => {
                    let model = model.context("--function kriging needs --config")?;
                    Box::new(move |x| model.predict(x))
                }
                LadderFunction::Step => Box::new(|x| if x >= 0.5 { 1.0 } else { 0.0 }),
                LadderFunction::Sin => Box::new(|x| (2.0 * std::f64::consts::PI * x).sin()),
            };
            let ladder = Partition::uniform(*coarse)?.dyadic_ladder(*steps);
            let seq = norm_ladder(f, &ladder, &kernel)?;
            let mut csv = String::from("level,N,m_N\n");
            for (i, (n, v)) in seq.n_cells.iter().zip(&seq.values).enumerate() {
                csv.push_str(&format!("{i},{n},{v}\n"));
            }
            match &cli.out {
                Some(dir) => write_file(dir, "normladder.csv", &csv)?,
                None => std::io::stdout().write_all(csv.as_bytes())?,
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn write_file(dir: &Path, name: &str, text: &str) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = dir.join(name);
    std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
    eprintln!("wrote {}", path.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
