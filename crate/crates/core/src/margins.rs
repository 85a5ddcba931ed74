//! Gaussian injection model and per-row safety margins.
//!
//! For a row `w_i^T p <= b_i` and fluctuation `xi ~ N(0, S)`, the single-row
//! violation probability at mean `x` is `Phi((w_i^T x - b_i) / ||S^1/2 w_i||)`.
//! Requiring it to be at most `eta` gives the margin
//! `delta_i = ||S^1/2 w_i|| * Phi^-1(1 - eta)`. The margins define
//!
//! * the tightened polytope `{x : w_i^T x <= b_i - delta_i}`, which contains
//!   every dispatch that meets the joint chance constraint, and
//! * the inner region `{xi : w_i^T xi <= delta_i}`; a scenario inside it cannot
//!   violate any row for a dispatch in the tightened polytope.

use crate::error::{Error, Result};
use crate::grid::{FeasibilityPolytope, GridCase};
use crate::normal;
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

/// Eigenvalues below this fraction of the largest are treated as zero.
const RANK_CUTOFF: f64 = 1e-12;

/// Zero-mean Gaussian fluctuation `xi ~ N(0, S)` on bus injections.
///
/// `S` may be singular (slack and deterministic buses carry no noise); the
/// density is then taken on the range of `S`.
#[derive(Debug, Clone)]
pub struct GaussianSpec {
    pub cov: DMatrix<f64>,
    /// Symmetric PSD square root of `cov`.
    pub cov_sqrt: DMatrix<f64>,
    /// Orthonormal basis of the range of `cov` (n x k).
    basis: DMatrix<f64>,
    /// Nonzero eigenvalues matching the columns of `basis`.
    variances: DVector<f64>,
}

impl GaussianSpec {
    pub fn from_covariance(cov: DMatrix<f64>) -> Result<Self> {
        if !cov.is_square() {
            return Err(Error::Parameter("covariance must be square".into()));
        }
        let scale = cov.amax().max(f64::MIN_POSITIVE);
        if (&cov - cov.transpose()).amax() > 1e-12 * scale {
            return Err(Error::Parameter("covariance is not symmetric".into()));
        }
        let n = cov.nrows();
        let eig = SymmetricEigen::try_new(cov.clone(), f64::EPSILON, 10_000)
            .ok_or_else(|| Error::Numerical("covariance eigendecomposition failed".into()))?;
        if let Some(&bad) = eig
            .eigenvalues
            .iter()
            .find(|&&l| l < -1e-10 * scale.max(1.0))
        {
            return Err(Error::Parameter(format!(
                "covariance is not positive semidefinite (eigenvalue {bad:e})"
            )));
        }
        let lambda_max = eig.eigenvalues.iter().fold(0.0_f64, |a, &l| a.max(l));
        let keep: Vec<usize> = (0..n)
            .filter(|&k| eig.eigenvalues[k] > RANK_CUTOFF * lambda_max && lambda_max > 0.0)
            .collect();

        let mut cov_sqrt = DMatrix::zeros(n, n);
        for k in 0..n {
            let lambda = eig.eigenvalues[k].max(0.0);
            if lambda > 0.0 {
                let v = eig.eigenvectors.column(k);
                cov_sqrt += (v * v.transpose()) * lambda.sqrt();
            }
        }
        let cov_sqrt = (&cov_sqrt + cov_sqrt.transpose()) * 0.5;

        let basis = DMatrix::from_fn(n, keep.len(), |i, j| eig.eigenvectors[(i, keep[j])]);
        let variances =
            DVector::from_iterator(keep.len(), keep.iter().map(|&k| eig.eigenvalues[k]));
        Ok(Self {
            cov,
            cov_sqrt,
            basis,
            variances,
        })
    }

    /// Independent components with the given standard deviations.
    pub fn diagonal(std_devs: &[f64]) -> Result<Self> {
        if let Some(bad) = std_devs.iter().find(|s| !(s.is_finite() && **s >= 0.0)) {
            return Err(Error::Parameter(format!(
                "standard deviation {bad} is invalid"
            )));
        }
        let n = std_devs.len();
        let cov =
            DMatrix::from_diagonal(&DVector::from_iterator(n, std_devs.iter().map(|s| s * s)));
        let cov_sqrt = DMatrix::from_diagonal(&DVector::from_column_slice(std_devs));
        let keep: Vec<usize> = (0..n).filter(|&i| std_devs[i] > 0.0).collect();
        let basis = DMatrix::from_fn(n, keep.len(), |i, j| if i == keep[j] { 1.0 } else { 0.0 });
        let variances =
            DVector::from_iterator(keep.len(), keep.iter().map(|&i| std_devs[i].powi(2)));
        Ok(Self {
            cov,
            cov_sqrt,
            basis,
            variances,
        })
    }

    pub fn dim(&self) -> usize {
        self.cov.nrows()
    }

    /// Dimension of the subspace the fluctuations live on.
    pub fn rank(&self) -> usize {
        self.variances.len()
    }

    /// One draw `S^1/2 z` with `z ~ N(0, I)`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let z = DVector::from_fn(self.dim(), |_, _| rng.sample::<f64, _>(StandardNormal));
        &self.cov_sqrt * z
    }

    /// Log density of `xi` with respect to Lebesgue measure on the range of
    /// the covariance. Components of `xi` outside that range are ignored.
    pub fn ln_density(&self, xi: &DVector<f64>) -> Result<f64> {
        let k = self.rank();
        if k == 0 {
            return Err(Error::Numerical(
                "density of a degenerate (zero) covariance".into(),
            ));
        }
        let coords = self.basis.tr_mul(xi);
        let mut quad = 0.0;
        let mut ln_det = 0.0;
        for (c, v) in coords.iter().zip(self.variances.iter()) {
            quad += c * c / v;
            ln_det += v.ln();
        }
        Ok(-0.5 * quad - 0.5 * ln_det - 0.5 * k as f64 * (2.0 * std::f64::consts::PI).ln())
    }
}

/// Fluctuations proportional to nominal injections: `sigma_i = frac * |p_i|`
/// on non-slack buses, zero on the slack bus. In p.u.
pub fn build_uncertainty(case: &GridCase, sigma_frac: f64) -> Result<GaussianSpec> {
    if !(sigma_frac >= 0.0 && sigma_frac.is_finite()) {
        return Err(Error::Parameter(format!(
            "sigma fraction {sigma_frac} must be >= 0"
        )));
    }
    let slack = case.slack();
    let sigmas: Vec<f64> = case
        .buses
        .iter()
        .enumerate()
        .map(|(i, b)| {
            if i == slack {
                0.0
            } else {
                sigma_frac * b.injection_mw.abs() / case.base_mva
            }
        })
        .collect();
    GaussianSpec::diagonal(&sigmas)
}

/// Per-row margins for a polytope under a Gaussian model.
#[derive(Debug, Clone)]
pub struct MarginSet {
    /// `delta_i >= 0`, in the polytope's units.
    pub delta: DVector<f64>,
    /// Standardized margins `delta_i / ||S^1/2 w_i||`; `+inf` on deterministic rows.
    pub beta: DVector<f64>,
    /// `||S^1/2 w_i||`.
    pub scale: DVector<f64>,
    /// Rows `S^1/2 w_i` (J x n).
    pub sqrt_normals: DMatrix<f64>,
    pub eta: f64,
}

impl MarginSet {
    pub fn n_rows(&self) -> usize {
        self.delta.len()
    }

    /// A row is stochastic when the fluctuation moves it at all.
    pub fn is_stochastic(&self, row: usize) -> bool {
        self.beta[row].is_finite()
    }

    pub fn stochastic_rows(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.n_rows()).filter(|&i| self.is_stochastic(i))
    }
}

/// Margins `delta_i = ||S^1/2 w_i|| * Phi^-1(1 - eta)` for `0 < eta <= 1/2`.
pub fn compute_margins(
    poly: &FeasibilityPolytope,
    g: &GaussianSpec,
    eta: f64,
) -> Result<MarginSet> {
    if !(eta > 0.0 && eta <= 0.5) {
        return Err(Error::Parameter(format!(
            "eta = {eta} must lie in (0, 1/2]"
        )));
    }
    let mut m = margins_at_quantile(poly, g, normal::inverse_sf(eta))?;
    m.eta = eta;
    Ok(m)
}

/// Margins with a common standardized level `z >= 0`: `delta_i = ||S^1/2 w_i|| z`.
pub fn margins_at_quantile(
    poly: &FeasibilityPolytope,
    g: &GaussianSpec,
    z: f64,
) -> Result<MarginSet> {
    if poly.dim() != g.dim() {
        return Err(Error::Parameter(format!(
            "polytope dimension {} != covariance dimension {}",
            poly.dim(),
            g.dim()
        )));
    }
    if !(z >= 0.0) {
        return Err(Error::Parameter(format!(
            "standardized margin {z} must be >= 0"
        )));
    }
    let sqrt_normals = &poly.normals * &g.cov_sqrt;
    let sigma_max = g
        .cov
        .diagonal()
        .iter()
        .fold(0.0_f64, |a, &v| a.max(v))
        .sqrt();
    let j = poly.n_rows();
    let mut delta = DVector::zeros(j);
    let mut beta = DVector::from_element(j, f64::INFINITY);
    let mut scale = DVector::zeros(j);
    for i in 0..j {
        let s = sqrt_normals.row(i).norm();
        let w_norm = poly.normals.row(i).norm();
        scale[i] = s;
        if s > 1e-10 * w_norm * sigma_max && s > 0.0 {
            delta[i] = s * z;
            beta[i] = z;
        }
    }
    Ok(MarginSet {
        delta,
        beta,
        scale,
        sqrt_normals,
        eta: normal::sf(z),
    })
}

/// Rows `(w_i, b_i - delta_i)`.
pub fn tightened_polytope(poly: &FeasibilityPolytope, m: &MarginSet) -> FeasibilityPolytope {
    poly.with_offsets(&poly.offsets - &m.delta)
}

/// Whether `w_i^T xi <= delta_i` on every stochastic row.
///
/// Deterministic rows are skipped: the fluctuation cannot move them, so a
/// nonzero `w_i^T xi` there is rounding noise.
pub fn contains_inner(m: &MarginSet, poly: &FeasibilityPolytope, xi: &DVector<f64>) -> bool {
    m.stochastic_rows()
        .all(|i| poly.normals.row(i).dot(&xi.transpose()) <= m.delta[i])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "mode")]
pub enum PiMode {
    /// `max(0, 1 - sum_i Phi(-beta_i))`, a lower bound on the inner-region mass.
    UnionBound,
    /// Fraction of nominal samples inside the inner region.
    MonteCarlo { samples: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PiEstimate {
    pub value: f64,
    /// Standard error of a Monte Carlo estimate.
    pub std_error: Option<f64>,
    /// True when `value` is a guaranteed lower bound on the true mass.
    pub lower_bound: bool,
}

/// Estimates `pi = P(xi in inner region)` under the nominal distribution.
pub fn estimate_pi(m: &MarginSet, mode: PiMode, seed: u64) -> Result<PiEstimate> {
    match mode {
        PiMode::UnionBound => {
            let tail: f64 = m.stochastic_rows().map(|i| normal::sf(m.beta[i])).sum();
            Ok(PiEstimate {
                value: (1.0 - tail).max(0.0),
                std_error: None,
                lower_bound: true,
            })
        }
        PiMode::MonteCarlo { samples } => {
            if samples == 0 {
                return Err(Error::Parameter(
                    "monte-carlo pi estimate needs samples >= 1".into(),
                ));
            }
            let rows: Vec<usize> = m.stochastic_rows().collect();
            let n = m.sqrt_normals.ncols();
            let flat: Vec<f64> = rows
                .iter()
                .flat_map(|&i| m.sqrt_normals.row(i).iter().copied().collect::<Vec<_>>())
                .collect();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut z = vec![0.0; n];
            let mut inside = 0usize;
            for _ in 0..samples {
                z.iter_mut().for_each(|v| *v = rng.sample(StandardNormal));
                let ok = rows.iter().enumerate().all(|(r, &i)| {
                    let row = &flat[r * n..(r + 1) * n];
                    row.iter().zip(&z).map(|(a, b)| a * b).sum::<f64>() <= m.delta[i]
                });
                inside += ok as usize;
            }
            let p = inside as f64 / samples as f64;
            let se = (p * (1.0 - p) / samples as f64).sqrt();
            Ok(PiEstimate {
                value: p,
                std_error: Some(se),
                lower_bound: false,
            })
        }
    }
}
