//! Shape-constrained Gaussian-process interpolation on `[0, 1]`.
//!
//! The process is approximated on a knot partition by its piecewise-linear
//! interpolant, so a sample path is described by its knot values and the
//! constraint families (bounds, monotonicity, convexity) become linear
//! inequalities on those values. The posterior mode (MAP) is then the
//! minimum-norm interpolant `min cᵀ Γ⁻¹ c` under the constraints, solved as
//! a quadratic program; the posterior itself is a truncated Gaussian that
//! [`sampler`] draws from.

#![allow(clippy::neg_cmp_op_on_partial_ord)] // `!(a < b)` also rejects NaN

pub mod config;
pub mod constraints;
pub mod error;
pub mod experiment;
pub mod kernel;
pub mod linalg;
pub mod map;
pub mod partition;
pub mod qp;
pub mod rkhs;
pub mod sampler;
pub mod suite;

pub use constraints::{encode, encode_all, is_feasible, ConstraintSpec, LinearInequalitySystem};
pub use error::{Error, Result};
pub use kernel::{gram, GramMatrix, Kernel, KernelFamily};
pub use map::{build_problem, convergence_ladder, solve_map, ConvergenceReport, MapSolution, MapStatus, QpProblem};
pub use partition::{evaluate_pl, hat_evaluate, project, uniform_partition, CoefVector, Partition};
pub use rkhs::{check_block_lemma, hn_norm_sq, kriging_mean, norm_ladder, uniform_bound_constant, DesignData, KrigingModel};
pub use sampler::{condition_on_data, posterior_summary, sample, ConditionalGaussian, MethodChoice, PosteriorSummary, SampleBatch, SamplerOptions, SamplingMethod};
pub use config::ExperimentConfig;
pub use experiment::{compute_figure, run_figure_experiment, FigureResult, Manifest};
pub use suite::{run_property_suite, Mutation, SuiteReport};
