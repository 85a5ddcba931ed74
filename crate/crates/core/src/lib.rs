//! Joint chance-constrained DC optimal power flow.
//!
//! The pipeline is:
//!
//! 1. [`grid`] parses a MATPOWER case and builds the DC network matrices and
//!    the feasibility polytope `W p <= b`.
//! 2. [`margins`] computes per-row safety margins from the Gaussian injection
//!    model, giving the tightened polytope and the region of scenarios that can
//!    never bind.
//! 3. [`sampler`] draws scenarios from a mixture of single half-space tail
//!    distributions, so every scenario lies outside that region.
//! 4. [`scenario`] collapses the scenarios into one offset per row and solves
//!    the resulting linear program with the embedded simplex in [`lp`].
//! 5. [`validation`] checks dispatches out of sample and runs repeated
//!    experiments; [`report`] serializes the results.

pub mod error;
pub mod grid;
pub mod lp;
pub mod margins;
pub mod normal;
pub mod report;
pub mod sampler;
pub mod scenario;
pub mod validation;

pub use error::{Error, Result};
pub use grid::{
    build_matrices, build_polytope, parse_case, Branch, Bus, BusKind, FeasibilityPolytope,
    Generator, GridCase, GridMatrices, RowLabel,
};
pub use lp::{LinearProgram, LpSolution, LpStatus};
pub use margins::{
    build_uncertainty, compute_margins, contains_inner, estimate_pi, tightened_polytope,
    GaussianSpec, MarginSet, PiEstimate, PiMode,
};
pub use sampler::MixtureSampler;
pub use scenario::{
    assemble, reduce_scenarios, run_dc_opf, run_sa, run_sa_is, sample_size_cc,
    sample_size_filtered, sample_size_is, solve_dispatch, DispatchModel, DispatchSolution,
    ScenarioOrigin, ScenarioSet,
};
pub use validation::{
    out_of_sample_confidence, plan_experiment, run_experiment, run_experiment_on,
    solve_1d_synthetic, sweep_1d, validate_setpoints, Confidence, ExperimentConfig, ExperimentPlan,
    ExperimentReport, Method, RepetitionRecord, ScenarioCount, SweepPoint, Synthetic1d,
};
