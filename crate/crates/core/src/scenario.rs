//! Scenario approximation: sample-size bounds, scenario collapse, LP assembly
//! and the SA / SA-IS pipelines.

use crate::error::{Error, Result};
use crate::grid::{
    build_matrices, build_polytope, parse_case, FeasibilityPolytope, GridCase, GridMatrices,
};
use crate::lp::{self, LinearProgram, LpStatus};
use crate::margins::{compute_margins, tightened_polytope, GaussianSpec};
use crate::sampler::MixtureSampler;
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Coefficients this small are rounding noise from `A B^+ C`.
const COEFF_ZERO: f64 = 1e-13;

fn check_probability(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v < 1.0 {
        Ok(())
    } else {
        Err(Error::Parameter(format!("{name} = {v} must lie in (0, 1)")))
    }
}

/// `ceil(2 k ln(1/delta) + 2d + 2 d k ln(2k))` with `k` the inverse effective
/// violation level. All three public bounds go through here so that their
/// reductions to one another hold bit for bit.
fn scenario_bound(k: f64, delta: f64, d: usize) -> Result<u64> {
    let d = d as f64;
    let value = 2.0 * k * (1.0 / delta).ln() + 2.0 * d + 2.0 * d * k * (2.0 * k).ln();
    if !value.is_finite() || value > 9.0e15 {
        return Err(Error::Parameter(format!(
            "sample size {value} is not representable"
        )));
    }
    Ok(value.ceil().max(0.0) as u64)
}

/// Calafiore-Campi scenario count for violation level `eps` and confidence
/// `1 - delta` with `d` decision variables.
pub fn sample_size_cc(eps: f64, delta: f64, d: usize) -> Result<u64> {
    check_probability("eps", eps)?;
    check_probability("delta", delta)?;
    if d == 0 {
        return Err(Error::Parameter("d must be >= 1".into()));
    }
    scenario_bound(1.0 / eps, delta, d)
}

/// Scenario count when the scenarios inside the inner region (mass `pi`) are
/// discarded.
pub fn sample_size_filtered(eta: f64, delta: f64, d: usize, pi: f64) -> Result<u64> {
    sample_size_is(eta, delta, d, pi, 1.0)
}

/// Scenario count when scenarios come from the mixture with density-ratio
/// bound `m`.
pub fn sample_size_is(eta: f64, delta: f64, d: usize, pi: f64, m: f64) -> Result<u64> {
    if !(eta > 0.0 && eta <= 0.5) {
        return Err(Error::Parameter(format!(
            "eta = {eta} must lie in (0, 1/2]"
        )));
    }
    check_probability("delta", delta)?;
    if d == 0 {
        return Err(Error::Parameter("d must be >= 1".into()));
    }
    if !(0.0..1.0).contains(&pi) {
        return Err(Error::Parameter(format!("pi = {pi} must lie in [0, 1)")));
    }
    if !(m >= 1.0 && m.is_finite()) {
        return Err(Error::Parameter(format!("M = {m} must be >= 1")));
    }
    scenario_bound(m * (1.0 - pi) / eta, delta, d)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScenarioOrigin {
    Nominal,
    Mixture,
}

/// Fluctuation scenarios, one per row. An empty set stands for the
/// deterministic problem.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSet {
    pub scenarios: DMatrix<f64>,
    pub origin: ScenarioOrigin,
    pub seed: u64,
    /// Mixture component of each scenario (mixture origin only).
    pub components: Vec<usize>,
}

impl ScenarioSet {
    pub fn empty(dim: usize) -> Self {
        Self {
            scenarios: DMatrix::zeros(0, dim),
            origin: ScenarioOrigin::Nominal,
            seed: 0,
            components: Vec::new(),
        }
    }

    /// `n` draws from the nominal distribution.
    pub fn nominal(g: &GaussianSpec, n: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut scenarios = DMatrix::zeros(n, g.dim());
        for t in 0..n {
            let xi = g.sample(&mut rng);
            scenarios.set_row(t, &xi.transpose());
        }
        Self {
            scenarios,
            origin: ScenarioOrigin::Nominal,
            seed,
            components: Vec::new(),
        }
    }

    /// `n` draws from the importance mixture.
    pub fn mixture(sampler: &MixtureSampler, dim: usize, n: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut scenarios = DMatrix::zeros(n, dim);
        let mut components = Vec::with_capacity(n);
        for t in 0..n {
            let (xi, k) = sampler.sample_mixture(&mut rng);
            scenarios.set_row(t, &xi.transpose());
            components.push(k);
        }
        Self {
            scenarios,
            origin: ScenarioOrigin::Mixture,
            seed,
            components,
        }
    }

    pub fn len(&self) -> usize {
        self.scenarios.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.scenarios.ncols()
    }
}

/// Collapses the scenario constraints `W (p + xi_t) <= b` into one offset per
/// row: `r_i = b_i - max_t w_i^T xi_t`. The empty set gives `r = b`.
pub fn reduce_scenarios(poly: &FeasibilityPolytope, scen: &ScenarioSet) -> DVector<f64> {
    let mut r = poly.offsets.clone();
    if scen.is_empty() {
        return r;
    }
    // Each shift is summed in a fixed order, so it does not depend on which
    // other scenarios share the set (a blocked matrix product would).
    let n = poly.dim();
    for i in 0..poly.n_rows() {
        let mut worst = f64::NEG_INFINITY;
        for t in 0..scen.len() {
            let mut s = 0.0;
            for k in 0..n {
                s += poly.normals[(i, k)] * scen.scenarios[(t, k)];
            }
            worst = worst.max(s);
        }
        r[i] -= worst;
    }
    r
}

/// A parsed case with its matrices, polytope and decision-variable layout.
#[derive(Debug, Clone)]
pub struct DispatchModel {
    pub case: GridCase,
    pub matrices: GridMatrices,
    pub polytope: FeasibilityPolytope,
    /// Generators whose output is a decision variable (not on the slack bus).
    controls: Vec<usize>,
    /// Cost of the marginal slack unit, $/MWh.
    slack_cost: f64,
}

impl DispatchModel {
    pub fn new(case: GridCase) -> Result<Self> {
        let matrices = build_matrices(&case)?;
        let polytope = build_polytope(&case, &matrices);
        let slack = case.slack();
        let controls: Vec<usize> = (0..case.generators.len())
            .filter(|&k| case.generators[k].bus != slack)
            .collect();
        if controls.is_empty() {
            return Err(Error::Validation(
                "no dispatchable generator outside the slack bus".into(),
            ));
        }
        let slack_gens: Vec<f64> = case
            .generators
            .iter()
            .filter(|g| g.bus == slack)
            .map(|g| g.cost)
            .collect();
        if slack_gens.len() > 1 {
            log::warn!(
                "slack bus hosts {} generators; pricing slack output at the cheapest cost",
                slack_gens.len()
            );
        }
        let slack_cost = slack_gens.into_iter().fold(f64::INFINITY, f64::min);
        Ok(Self {
            case,
            matrices,
            polytope,
            controls,
            slack_cost,
        })
    }

    pub fn from_text(text: &str) -> Result<Self> {
        Self::new(parse_case(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_text(&text)
    }

    /// Number of decision variables `d`.
    pub fn n_controls(&self) -> usize {
        self.controls.len()
    }

    /// Indices into `case.generators` of the decision variables.
    pub fn controls(&self) -> &[usize] {
        &self.controls
    }

    /// Full bus injection vector (p.u.) for controllable outputs `x` (p.u.).
    /// Load buses sit at their nominal injection; the slack entry carries the
    /// balancing injection.
    pub fn injections(&self, x: &[f64]) -> DVector<f64> {
        let mut p = self.fixed_injections();
        for (&k, &v) in self.controls.iter().zip(x) {
            p[self.case.generators[k].bus] += v;
        }
        let slack = self.case.slack();
        p[slack] = -(p.sum() - p[slack]);
        p
    }

    /// Injections with every controllable output at zero; the slack entry is 0.
    fn fixed_injections(&self) -> DVector<f64> {
        let base = self.case.base_mva;
        let slack = self.case.slack();
        DVector::from_fn(self.case.n_buses(), |i, _| {
            if i == slack {
                0.0
            } else {
                -self.case.buses[i].demand_mw / base
            }
        })
    }

    fn total_load_pu(&self) -> f64 {
        self.case.buses.iter().map(|b| b.demand_mw).sum::<f64>() / self.case.base_mva
    }
}

/// Builds the LP over controllable generator outputs (p.u.): rows
/// `W E x <= min(r_i, b_i - delta_i) - W p_fixed` with `r` the collapsed
/// scenario offsets and the margin term present when `tightened` is given.
/// The objective is total generation cost in $/h.
pub fn assemble(
    model: &DispatchModel,
    scen: &ScenarioSet,
    tightened: Option<&FeasibilityPolytope>,
) -> Result<LinearProgram> {
    let poly = &model.polytope;
    let n = poly.dim();
    if !scen.is_empty() && scen.dim() != n {
        return Err(Error::Parameter(format!(
            "scenario dimension {} != bus count {n}",
            scen.dim()
        )));
    }
    let mut offsets = reduce_scenarios(poly, scen);
    if let Some(pm) = tightened {
        if pm.n_rows() != poly.n_rows() || pm.normals != poly.normals {
            return Err(Error::Parameter(
                "tightened polytope does not share the row normals".into(),
            ));
        }
        for i in 0..offsets.len() {
            offsets[i] = offsets[i].min(pm.offsets[i]);
        }
    }
    let fixed = &poly.normals * model.fixed_injections();

    let case = &model.case;
    let base = case.base_mva;
    let d = model.n_controls();
    let objective: Vec<f64> = model
        .controls
        .iter()
        .map(|&k| (case.generators[k].cost - model.slack_cost) * base)
        .collect();
    let mut lp = LinearProgram::new(objective);
    lp.offset = model.slack_cost * model.total_load_pu() * base;
    for (v, &k) in model.controls.iter().enumerate() {
        let g = &case.generators[k];
        lp.set_bounds(v, g.p_min_mw / base, g.p_max_mw / base);
    }

    for i in 0..poly.n_rows() {
        let coeffs: Vec<f64> = model
            .controls
            .iter()
            .map(|&k| {
                let a = poly.normals[(i, case.generators[k].bus)];
                if a.abs() < COEFF_ZERO {
                    0.0
                } else {
                    a
                }
            })
            .collect();
        let rhs = offsets[i] - fixed[i];
        if coeffs.iter().all(|&a| a == 0.0) && rhs >= 0.0 {
            continue;
        }
        debug_assert_eq!(coeffs.len(), d);
        lp.add_row(coeffs, rhs, poly.labels[i].to_string());
    }
    Ok(lp)
}

/// Outcome of one dispatch LP.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DispatchSolution {
    pub status: LpStatus,
    /// Total generation cost, $/h (optimal only).
    pub objective: Option<f64>,
    /// Output of each controllable generator, MW.
    pub setpoints_mw: Vec<f64>,
    /// Index into the case's generator table for each setpoint.
    pub generators: Vec<usize>,
    /// Balancing output of the slack bus generation, MW.
    pub slack_mw: Option<f64>,
    /// Full bus injection vector, p.u.
    pub injections_pu: Vec<f64>,
    /// Labels of the LP rows holding with equality.
    pub active_rows: Vec<String>,
    pub n_scenarios: usize,
}

impl DispatchSolution {
    pub fn is_optimal(&self) -> bool {
        self.status == LpStatus::Optimal
    }
}

/// Solves an assembled LP and maps the result back to generator setpoints.
pub fn solve_dispatch(
    model: &DispatchModel,
    lp: &LinearProgram,
    n_scenarios: usize,
) -> Result<DispatchSolution> {
    let sol = lp::solve(lp)?;
    let base = model.case.base_mva;
    if sol.status != LpStatus::Optimal {
        return Ok(DispatchSolution {
            status: sol.status,
            objective: None,
            setpoints_mw: Vec::new(),
            generators: model.controls.clone(),
            slack_mw: None,
            injections_pu: Vec::new(),
            active_rows: Vec::new(),
            n_scenarios,
        });
    }
    let p = model.injections(&sol.x);
    let slack = model.case.slack();
    Ok(DispatchSolution {
        status: sol.status,
        objective: Some(sol.objective),
        setpoints_mw: sol.x.iter().map(|v| v * base).collect(),
        generators: model.controls.clone(),
        slack_mw: Some(p[slack] * base + model.case.buses[slack].demand_mw),
        injections_pu: p.iter().copied().collect(),
        active_rows: sol
            .active_rows
            .iter()
            .map(|&i| lp.rows[i].label.clone())
            .collect(),
        n_scenarios,
    })
}

/// Deterministic DC-OPF on the untightened polytope.
pub fn run_dc_opf(model: &DispatchModel) -> Result<DispatchSolution> {
    let lp = assemble(model, &ScenarioSet::empty(model.polytope.dim()), None)?;
    solve_dispatch(model, &lp, 0)
}

/// Plain scenario approximation with `n` nominal scenarios.
pub fn run_sa(
    model: &DispatchModel,
    g: &GaussianSpec,
    n: usize,
    seed: u64,
) -> Result<DispatchSolution> {
    let scen = ScenarioSet::nominal(g, n, seed);
    let lp = assemble(model, &scen, None)?;
    solve_dispatch(model, &lp, n)
}

/// Scenario approximation with tightening and importance sampling: margins at
/// level `eta`, `n` scenarios from the tail mixture, and the tightened rows.
///
/// Without stochastic rows there is nothing to sample and the problem is the
/// tightened deterministic one.
pub fn run_sa_is(
    model: &DispatchModel,
    g: &GaussianSpec,
    eta: f64,
    n: usize,
    seed: u64,
) -> Result<DispatchSolution> {
    let margins = compute_margins(&model.polytope, g, eta)?;
    let pm = tightened_polytope(&model.polytope, &margins);
    let dim = model.polytope.dim();
    let scen = if n == 0 {
        ScenarioSet::empty(dim)
    } else {
        match MixtureSampler::new(&model.polytope, &margins, g) {
            Ok(sampler) => ScenarioSet::mixture(&sampler, dim, n, seed),
            Err(Error::NoUncertainty) => ScenarioSet::empty(dim),
            Err(e) => return Err(e),
        }
    };
    let lp = assemble(model, &scen, Some(&pm))?;
    solve_dispatch(model, &lp, scen.len())
}
