//! Test-only reference implementations, independent of the library's normal
//! distribution code.
#![allow(dead_code)]

use std::f64::consts::PI;

/// `erf(x)` for `0 <= x <= 1.5` by the everywhere-positive series
/// `2/sqrt(pi) e^{-x^2} sum_n 2^n x^{2n+1} / (1*3*...*(2n+1))`.
fn erf_series(x: f64) -> f64 {
    let x2 = x * x;
    let mut term = x;
    let mut sum = x;
    let mut n = 0.0;
    loop {
        n += 1.0;
        term *= 2.0 * x2 / (2.0 * n + 1.0);
        sum += term;
        if term <= 1e-18 * sum {
            break;
        }
    }
    2.0 / PI.sqrt() * (-x2).exp() * sum
}

/// `erfc(x)` for `x > 0` by the continued fraction
/// `e^{-x^2}/sqrt(pi) * 1/(x + (1/2)/(x + 1/(x + (3/2)/(x + ...))))`,
/// evaluated with the modified Lentz method.
fn erfc_cf(x: f64) -> f64 {
    let tiny = 1e-300;
    let mut f = x;
    let mut c = x;
    let mut d = 0.0;
    for k in 1..10_000 {
        let a = k as f64 / 2.0;
        d = x + a * d;
        if d.abs() < tiny {
            d = tiny;
        }
        c = x + a / c;
        if c.abs() < tiny {
            c = tiny;
        }
        d = 1.0 / d;
        let delta = c * d;
        f *= delta;
        if (delta - 1.0).abs() < 2.0 * f64::EPSILON {
            break;
        }
    }
    (-x * x).exp() / PI.sqrt() / f
}

pub fn erfc(x: f64) -> f64 {
    if x < 0.0 {
        2.0 - erfc(-x)
    } else if x <= 1.5 {
        1.0 - erf_series(x)
    } else {
        erfc_cf(x)
    }
}

/// Standard normal survival function `P(Z > z)`.
pub fn sf(z: f64) -> f64 {
    0.5 * erfc(z / 2.0_f64.sqrt())
}

pub fn cdf(z: f64) -> f64 {
    sf(-z)
}

/// `z` with `sf(z) = q`, by bisection.
pub fn inverse_sf(q: f64) -> f64 {
    let (mut lo, mut hi) = (-40.0_f64, 40.0_f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if sf(mid) > q {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// CDF of a standard normal conditioned on `Z >= beta`.
pub fn truncated_cdf(y: f64, beta: f64) -> f64 {
    if y <= beta {
        0.0
    } else {
        1.0 - sf(y) / sf(beta)
    }
}

/// Two-sided Kolmogorov-Smirnov statistic of `samples` against `cdf`.
pub fn ks_statistic(samples: &mut [f64], cdf: impl Fn(f64) -> f64) -> f64 {
    samples.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = samples.len() as f64;
    samples
        .iter()
        .enumerate()
        .map(|(i, &y)| {
            let f = cdf(y);
            (f - i as f64 / n).max((i as f64 + 1.0) / n - f)
        })
        .fold(0.0, f64::max)
}

/// Asymptotic two-sided KS critical value at level `alpha`.
pub fn ks_critical(n: usize, alpha: f64) -> f64 {
    (-(alpha / 2.0).ln() / 2.0).sqrt() / (n as f64).sqrt()
}

/// Gaussian log density with covariance `cov` (full rank), by Cholesky.
pub fn gaussian_ln_pdf(cov: &[Vec<f64>], x: &[f64]) -> f64 {
    let n = x.len();
    let mut l = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..=i {
            let s: f64 = (0..j).map(|k| l[i][k] * l[j][k]).sum();
            if i == j {
                l[i][j] = (cov[i][i] - s).sqrt();
            } else {
                l[i][j] = (cov[i][j] - s) / l[j][j];
            }
        }
    }
    // Solve L y = x.
    let mut y = vec![0.0; n];
    for i in 0..n {
        let s: f64 = (0..i).map(|k| l[i][k] * y[k]).sum();
        y[i] = (x[i] - s) / l[i][i];
    }
    let quad: f64 = y.iter().map(|v| v * v).sum();
    let ln_det: f64 = (0..n).map(|i| 2.0 * l[i][i].ln()).sum();
    -0.5 * quad - 0.5 * ln_det - 0.5 * n as f64 * (2.0 * PI).ln()
}

use ccopf::lp::{self, LinearProgram, LpSolution};
use ccopf::{reduce_scenarios, FeasibilityPolytope, ScenarioOrigin, ScenarioSet};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// A random scenario program: `min c^T x` over a box, with rows
/// `W (x + xi_t) <= b` for every scenario.
pub struct CollapseInstance {
    pub poly: FeasibilityPolytope,
    pub scen: ScenarioSet,
    pub cost: Vec<f64>,
    pub bound: f64,
}

impl CollapseInstance {
    /// `n <= 6` variables, `J <= 8` rows and `N <= 50` scenarios.
    pub fn random(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(1..=6);
        let j = rng.random_range(1..=8);
        let big_n = rng.random_range(1..=50);
        let normals = DMatrix::from_fn(j, n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let offsets = DVector::from_fn(j, |_, _| rng.random_range(0.5..2.0));
        let spread: f64 = rng.random_range(0.05..0.5);
        let scenarios = DMatrix::from_fn(big_n, n, |_, _| {
            spread * rng.sample::<f64, _>(StandardNormal)
        });
        let cost = (0..n)
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect();
        Self {
            poly: FeasibilityPolytope::new(normals, offsets).unwrap(),
            scen: ScenarioSet {
                scenarios,
                origin: ScenarioOrigin::Nominal,
                seed,
                components: Vec::new(),
            },
            cost,
            bound: 3.0,
        }
    }

    fn base_lp(&self) -> LinearProgram {
        let mut lp = LinearProgram::new(self.cost.clone());
        for v in 0..self.cost.len() {
            lp.set_bounds(v, -self.bound, self.bound);
        }
        lp
    }

    fn row(&self, i: usize) -> Vec<f64> {
        self.poly.normals.row(i).iter().copied().collect()
    }

    /// One row per polytope row with the collapsed offsets.
    pub fn reduced(&self) -> LpSolution {
        let r = reduce_scenarios(&self.poly, &self.scen);
        let mut lp = self.base_lp();
        for i in 0..self.poly.n_rows() {
            lp.add_row(self.row(i), r[i], format!("r{i}"));
        }
        lp::solve(&lp).unwrap()
    }

    /// Every (scenario, row) pair as its own row.
    pub fn stacked(&self) -> LpSolution {
        let mut lp = self.base_lp();
        for t in 0..self.scen.len() {
            let xi = self.scen.scenarios.row(t).transpose();
            for i in 0..self.poly.n_rows() {
                let shift = self.poly.normals.row(i).dot(&xi.transpose());
                lp.add_row(
                    self.row(i),
                    self.poly.offsets[i] - shift,
                    format!("t{t}r{i}"),
                );
            }
        }
        lp::solve(&lp).unwrap()
    }
}
