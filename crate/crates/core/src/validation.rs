//! Out-of-sample checks, the one-dimensional benchmark, and repeated
//! experiments over a case.

use crate::error::{Error, Result};
use crate::grid::FeasibilityPolytope;
use crate::lp::{self, LinearProgram, LpStatus, FEASIBILITY_TOL};
use crate::margins::{
    build_uncertainty, compute_margins, estimate_pi, margins_at_quantile, tightened_polytope,
    GaussianSpec, MarginSet, PiEstimate, PiMode,
};
use crate::normal;
use crate::sampler::MixtureSampler;
use crate::scenario::{
    reduce_scenarios, run_dc_opf, run_sa, run_sa_is, sample_size_cc, sample_size_is, DispatchModel,
    DispatchSolution, ScenarioSet,
};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

/// Stream used for out-of-sample draws, so they never coincide with the
/// scenario draws made from the same seed.
const TEST_STREAM: u64 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Confidence {
    pub value: f64,
    /// Binomial standard error `sqrt(v (1 - v) / n)`.
    pub std_error: f64,
}

/// Fraction of `n_test` nominal draws `xi` with `W (x + xi) <= b`.
///
/// `x` is the full injection vector. Rows are checked with the same
/// feasibility tolerance the LP solver accepts.
pub fn out_of_sample_confidence(
    x: &DVector<f64>,
    poly: &FeasibilityPolytope,
    g: &GaussianSpec,
    n_test: usize,
    seed: u64,
) -> Result<Confidence> {
    if n_test == 0 {
        return Err(Error::Parameter("n_test must be >= 1".into()));
    }
    if x.len() != poly.dim() || g.dim() != poly.dim() {
        return Err(Error::Parameter(
            "dispatch, polytope and covariance disagree in size".into(),
        ));
    }
    let slack = poly.slack(x);
    let tol: Vec<f64> = poly
        .offsets
        .iter()
        .map(|b| FEASIBILITY_TOL * b.abs().max(1.0))
        .collect();

    // Only the columns of S^1/2 that are nonzero carry randomness.
    let active: Vec<usize> = (0..g.dim())
        .filter(|&c| g.cov_sqrt.column(c).iter().any(|&v| v != 0.0))
        .collect();
    let sqrt_normals = &poly.normals * &g.cov_sqrt;
    let k = active.len();
    let j = poly.n_rows();
    let mut moving = Vec::new();
    let mut flat = Vec::new();
    for i in 0..j {
        let row: Vec<f64> = active.iter().map(|&c| sqrt_normals[(i, c)]).collect();
        if row.iter().any(|&v| v != 0.0) {
            moving.push(i);
            flat.extend(row);
        } else if slack[i] < -tol[i] {
            // Violated no matter what the fluctuation does.
            return Ok(Confidence {
                value: 0.0,
                std_error: 0.0,
            });
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(TEST_STREAM);
    let mut z = vec![0.0; k];
    let mut hits = 0usize;
    for _ in 0..n_test {
        for v in z.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
        let ok = moving.iter().enumerate().all(|(r, &i)| {
            let row = &flat[r * k..(r + 1) * k];
            let shift: f64 = row.iter().zip(&z).map(|(a, b)| a * b).sum();
            shift <= slack[i] + tol[i]
        });
        if ok {
            hits += 1;
        }
    }
    let value = hits as f64 / n_test as f64;
    Ok(Confidence {
        value,
        std_error: (value * (1.0 - value) / n_test as f64).sqrt(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    DcOpf,
    Sa,
    SaIs,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::DcOpf => "dc-opf",
            Method::Sa => "sa",
            Method::SaIs => "sa-is",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dc-opf" => Ok(Method::DcOpf),
            "sa" => Ok(Method::Sa),
            "sa-is" => Ok(Method::SaIs),
            other => Err(Error::Parameter(format!(
                "unknown method '{other}' (dc-opf, sa, sa-is)"
            ))),
        }
    }
}

/// Result of the one-dimensional benchmark
/// `max x  s.t.  P(x + xi <= a) >= 1 - eta`, `xi ~ N(0, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Synthetic1d {
    pub x_hat: f64,
    /// Exact solution `a - Phi^-1(1 - eta)`.
    pub x_star: f64,
    pub gap: f64,
    pub status: LpStatus,
}

/// Runs `method` on the one-dimensional benchmark with `n` scenarios.
pub fn solve_1d_synthetic(
    a: f64,
    eta: f64,
    method: Method,
    n: usize,
    seed: u64,
) -> Result<Synthetic1d> {
    if !(eta > 0.0 && eta < 0.5) {
        return Err(Error::Parameter(format!(
            "eta = {eta} must lie in (0, 1/2)"
        )));
    }
    let x_star = a - normal::inverse_sf(eta);
    let (poly, g) = one_dim_problem(a)?;
    let (scen, tightened) = match method {
        Method::DcOpf => (ScenarioSet::empty(1), None),
        Method::Sa => (ScenarioSet::nominal(&g, n, seed), None),
        Method::SaIs => {
            let m = compute_margins(&poly, &g, eta)?;
            one_dim_is(&poly, &g, &m, n, seed)?
        }
    };
    let x_hat = solve_1d_lp(&poly, &scen, tightened.as_ref())?;
    Ok(match x_hat {
        Some(x) => Synthetic1d {
            x_hat: x,
            x_star,
            gap: x - x_star,
            status: LpStatus::Optimal,
        },
        None => Synthetic1d {
            x_hat: f64::NAN,
            x_star,
            gap: f64::NAN,
            status: LpStatus::Infeasible,
        },
    })
}

fn one_dim_problem(a: f64) -> Result<(FeasibilityPolytope, GaussianSpec)> {
    if !a.is_finite() {
        return Err(Error::Parameter(format!("a = {a} must be finite")));
    }
    let poly = FeasibilityPolytope::new(
        DMatrix::from_element(1, 1, 1.0),
        DVector::from_element(1, a),
    )?;
    Ok((poly, GaussianSpec::diagonal(&[1.0])?))
}

fn one_dim_is(
    poly: &FeasibilityPolytope,
    g: &GaussianSpec,
    m: &MarginSet,
    n: usize,
    seed: u64,
) -> Result<(ScenarioSet, Option<FeasibilityPolytope>)> {
    let sampler = MixtureSampler::new(poly, m, g)?;
    let scen = if n == 0 {
        ScenarioSet::empty(1)
    } else {
        ScenarioSet::mixture(&sampler, 1, n, seed)
    };
    Ok((scen, Some(tightened_polytope(poly, m))))
}

/// `max x s.t. x <= r` through the LP solver; `None` when infeasible.
fn solve_1d_lp(
    poly: &FeasibilityPolytope,
    scen: &ScenarioSet,
    tightened: Option<&FeasibilityPolytope>,
) -> Result<Option<f64>> {
    let mut r = reduce_scenarios(poly, scen);
    if let Some(pm) = tightened {
        r[0] = r[0].min(pm.offsets[0]);
    }
    let mut lp = LinearProgram::new(vec![-1.0]);
    lp.add_row(vec![1.0], r[0], "x <= r");
    let sol = lp::solve(&lp)?;
    match sol.status {
        LpStatus::Optimal => Ok(Some(sol.x[0])),
        LpStatus::Infeasible => Ok(None),
        LpStatus::Unbounded => Err(Error::Numerical(
            "one-dimensional problem reported unbounded".into(),
        )),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    /// Offset of the tightened set `{x <= b}`.
    pub b: f64,
    /// Fraction of seeds whose solution meets the chance constraint.
    pub feasibility_rate: f64,
    pub n: usize,
}

/// SA-IS on the one-dimensional benchmark with the tightened set replaced by
/// `{x <= b}` and the inner region by `{xi <= a - b}`, for every `(b, n)` pair
/// over `reps` seeds starting at `base_seed`.
pub fn sweep_1d(
    a: f64,
    eta: f64,
    b_values: &[f64],
    n_values: &[usize],
    reps: usize,
    base_seed: u64,
) -> Result<Vec<SweepPoint>> {
    if !(eta > 0.0 && eta < 0.5) {
        return Err(Error::Parameter(format!(
            "eta = {eta} must lie in (0, 1/2)"
        )));
    }
    if reps == 0 {
        return Err(Error::Parameter("reps must be >= 1".into()));
    }
    let (poly, g) = one_dim_problem(a)?;
    let mut out = Vec::with_capacity(b_values.len() * n_values.len());
    for &b in b_values {
        if !(b <= a) {
            return Err(Error::Parameter(format!("b = {b} must not exceed a = {a}")));
        }
        let m = margins_at_quantile(&poly, &g, a - b)?;
        for &n in n_values {
            let mut feasible = 0usize;
            for k in 0..reps {
                let (scen, pm) = one_dim_is(&poly, &g, &m, n, base_seed.wrapping_add(k as u64))?;
                if let Some(x) = solve_1d_lp(&poly, &scen, pm.as_ref())? {
                    if normal::cdf(a - x) >= 1.0 - eta {
                        feasible += 1;
                    }
                }
            }
            out.push(SweepPoint {
                b,
                feasibility_rate: feasible as f64 / reps as f64,
                n,
            });
        }
    }
    Ok(out)
}

/// Scenario count: fixed, or the sufficient bound for the method.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScenarioCount {
    Fixed(usize),
    Auto,
}

impl FromStr for ScenarioCount {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "auto" {
            return Ok(ScenarioCount::Auto);
        }
        s.parse().map(ScenarioCount::Fixed).map_err(|_| {
            Error::Parameter(format!(
                "scenario count '{s}' is neither an integer nor 'auto'"
            ))
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub case_path: PathBuf,
    pub eta: f64,
    /// Confidence parameter of the sufficient scenario bounds.
    pub delta: f64,
    pub method: Method,
    pub scenarios: ScenarioCount,
    pub sigma_frac: f64,
    pub repetitions: usize,
    /// Out-of-sample draws per repetition.
    pub n_test: usize,
    pub base_seed: u64,
    pub pi_mode: PiMode,
    /// Worker threads for repetitions.
    pub jobs: usize,
}

impl ExperimentConfig {
    pub fn new(case_path: impl Into<PathBuf>, method: Method) -> Self {
        Self {
            case_path: case_path.into(),
            eta: 0.05,
            delta: 0.01,
            method,
            scenarios: ScenarioCount::Fixed(600),
            sigma_frac: 0.07,
            repetitions: 50,
            n_test: 1000,
            base_seed: 0,
            pi_mode: PiMode::UnionBound,
            jobs: 1,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0 && self.eta <= 0.5) {
            return Err(Error::Parameter(format!(
                "eta = {} must lie in (0, 1/2]",
                self.eta
            )));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::Parameter(format!(
                "delta = {} must lie in (0, 1)",
                self.delta
            )));
        }
        if !(self.sigma_frac >= 0.0 && self.sigma_frac.is_finite()) {
            return Err(Error::Parameter(format!(
                "sigma fraction {} must be >= 0",
                self.sigma_frac
            )));
        }
        if self.repetitions == 0 {
            return Err(Error::Parameter("repetitions must be >= 1".into()));
        }
        if self.n_test == 0 {
            return Err(Error::Parameter("out-of-sample count must be >= 1".into()));
        }
        if self.jobs == 0 {
            return Err(Error::Parameter("jobs must be >= 1".into()));
        }
        Ok(())
    }

    /// Seed of repetition `k`.
    pub fn seed_for(&self, k: usize) -> u64 {
        self.base_seed.wrapping_add(k as u64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepetitionRecord {
    pub repetition: usize,
    pub seed: u64,
    pub cost: Option<f64>,
    pub confidence: Option<f64>,
    pub confidence_std_error: Option<f64>,
    /// `optimal`, `infeasible`, `unbounded`, or `error: <message>`.
    pub status: String,
    pub setpoints_mw: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub case: String,
    pub eta: f64,
    pub method: Method,
    /// Scenarios per repetition after resolving `auto`.
    pub scenarios: usize,
    pub repetitions: usize,
    /// Number of decision variables.
    pub d: usize,
    /// Inner-region mass estimate (SA-IS).
    pub pi: Option<PiEstimate>,
    /// Density-ratio bound of the mixture (SA-IS).
    pub bound_m: Option<f64>,
    /// Means over repetitions that produced a value.
    pub mean_cost: Option<f64>,
    pub mean_confidence: Option<f64>,
    pub failures: usize,
    pub config: ExperimentConfig,
    pub records: Vec<RepetitionRecord>,
}

impl ExperimentReport {
    /// Mean of the recorded costs, in record order.
    pub fn recompute_mean_cost(&self) -> Option<f64> {
        mean(self.records.iter().filter_map(|r| r.cost))
    }

    pub fn recompute_mean_confidence(&self) -> Option<f64> {
        mean(self.records.iter().filter_map(|r| r.confidence))
    }
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, count) = values.fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
    (count > 0).then(|| sum / count as f64)
}

/// Loads the case named in `config` and runs the experiment.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport> {
    config.validate()?;
    let model = DispatchModel::load(&config.case_path)?;
    run_experiment_on(&model, config)
}

/// Resolved scenario count and the mixture diagnostics behind it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExperimentPlan {
    pub scenarios: usize,
    pub d: usize,
    /// Inner-region mass estimate (SA-IS only).
    pub pi: Option<PiEstimate>,
    /// Density-ratio bound `M` (SA-IS with stochastic rows only).
    pub bound_m: Option<f64>,
}

/// Resolves the scenario count of `config` for `model`. For `auto` this is
/// the sufficient bound of the method: Calafiore-Campi for SA and the
/// importance-sampling bound with the configured `pi` estimator for SA-IS.
pub fn plan_experiment(model: &DispatchModel, config: &ExperimentConfig) -> Result<ExperimentPlan> {
    config.validate()?;
    let g = build_uncertainty(&model.case, config.sigma_frac)?;
    let d = model.n_controls();
    let (pi, bound_m) = if config.method == Method::SaIs {
        let m = compute_margins(&model.polytope, &g, config.eta)?;
        let pi = estimate_pi(&m, config.pi_mode, config.base_seed)?;
        let bound = match MixtureSampler::new(&model.polytope, &m, &g) {
            Ok(s) => Some(s.bound()),
            Err(Error::NoUncertainty) => None,
            Err(e) => return Err(e),
        };
        (Some(pi), bound)
    } else {
        (None, None)
    };
    let scenarios = match (config.scenarios, config.method) {
        (_, Method::DcOpf) => 0,
        (ScenarioCount::Fixed(n), _) => n,
        (ScenarioCount::Auto, Method::Sa) => {
            to_count(sample_size_cc(config.eta, config.delta, d)?)?
        }
        (ScenarioCount::Auto, Method::SaIs) => match (pi, bound_m) {
            (Some(pi), Some(bound)) => {
                // A Monte Carlo estimate can hit 1 exactly; keep it inside [0, 1).
                let pi = pi.value.min(1.0 - f64::EPSILON);
                to_count(sample_size_is(config.eta, config.delta, d, pi, bound)?)?
            }
            _ => 0,
        },
    };
    Ok(ExperimentPlan {
        scenarios,
        d,
        pi,
        bound_m,
    })
}

/// Runs the repetitions of `config` on an already loaded model. Solver
/// failures are recorded per repetition; configuration problems are errors.
pub fn run_experiment_on(
    model: &DispatchModel,
    config: &ExperimentConfig,
) -> Result<ExperimentReport> {
    let plan = plan_experiment(model, config)?;
    let g = build_uncertainty(&model.case, config.sigma_frac)?;
    let scenarios = plan.scenarios;

    let run_one = |k: usize| -> RepetitionRecord {
        let seed = config.seed_for(k);
        let outcome: Result<DispatchSolution> = match config.method {
            Method::DcOpf => run_dc_opf(model),
            Method::Sa => run_sa(model, &g, scenarios, seed),
            Method::SaIs => run_sa_is(model, &g, config.eta, scenarios, seed),
        };
        let sol = match outcome {
            Ok(sol) => sol,
            Err(e) => {
                return RepetitionRecord {
                    repetition: k,
                    seed,
                    cost: None,
                    confidence: None,
                    confidence_std_error: None,
                    status: format!("error: {e}"),
                    setpoints_mw: Vec::new(),
                }
            }
        };
        let status = match sol.status {
            LpStatus::Optimal => "optimal",
            LpStatus::Infeasible => "infeasible",
            LpStatus::Unbounded => "unbounded",
        };
        let conf = if sol.is_optimal() {
            let x = DVector::from_vec(sol.injections_pu.clone());
            match out_of_sample_confidence(&x, &model.polytope, &g, config.n_test, seed) {
                Ok(c) => Some(c),
                Err(e) => {
                    return RepetitionRecord {
                        repetition: k,
                        seed,
                        cost: sol.objective,
                        confidence: None,
                        confidence_std_error: None,
                        status: format!("error: {e}"),
                        setpoints_mw: sol.setpoints_mw,
                    }
                }
            }
        } else {
            None
        };
        RepetitionRecord {
            repetition: k,
            seed,
            cost: sol.objective,
            confidence: conf.map(|c| c.value),
            confidence_std_error: conf.map(|c| c.std_error),
            status: status.to_string(),
            setpoints_mw: sol.setpoints_mw,
        }
    };

    let records: Vec<RepetitionRecord> = if config.jobs > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(config.jobs)
            .build()
            .map_err(|e| Error::Parameter(format!("cannot start worker pool: {e}")))?;
        pool.install(|| {
            (0..config.repetitions)
                .into_par_iter()
                .map(run_one)
                .collect()
        })
    } else {
        (0..config.repetitions).map(run_one).collect()
    };

    let failures = records.iter().filter(|r| r.status != "optimal").count();
    let mut report = ExperimentReport {
        case: model.case.name.clone(),
        eta: config.eta,
        method: config.method,
        scenarios,
        repetitions: config.repetitions,
        d: plan.d,
        pi: plan.pi,
        bound_m: plan.bound_m,
        mean_cost: None,
        mean_confidence: None,
        failures,
        config: config.clone(),
        records,
    };
    report.mean_cost = report.recompute_mean_cost();
    report.mean_confidence = report.recompute_mean_confidence();
    Ok(report)
}

fn to_count(n: u64) -> Result<usize> {
    usize::try_from(n).map_err(|_| Error::Parameter(format!("scenario count {n} is too large")))
}

/// Out-of-sample confidence of controllable setpoints (MW, in the model's
/// control order).
pub fn validate_setpoints(
    model: &DispatchModel,
    g: &GaussianSpec,
    setpoints_mw: &[f64],
    n_test: usize,
    seed: u64,
) -> Result<Confidence> {
    if setpoints_mw.len() != model.n_controls() {
        return Err(Error::Parameter(format!(
            "expected {} setpoints, got {}",
            model.n_controls(),
            setpoints_mw.len()
        )));
    }
    let base = model.case.base_mva;
    let x: Vec<f64> = setpoints_mw.iter().map(|v| v / base).collect();
    out_of_sample_confidence(&model.injections(&x), &model.polytope, g, n_test, seed)
}
