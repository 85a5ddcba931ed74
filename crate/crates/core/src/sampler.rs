//! Importance distribution over scenarios outside the inner region.
//!
//! Component `D_k` is the nominal Gaussian conditioned on violating the single
//! row `k`: `w_k^T xi > delta_k`. The mixture weights are proportional to the
//! tail masses `p_k = Phi(-beta_k)`, so every draw lies outside the inner
//! region and the nominal conditional density is at most `M` times the
//! mixture density, with `M = sum_k p_k / max_k p_k`.

use crate::error::{Error, Result};
use crate::grid::FeasibilityPolytope;
use crate::margins::{GaussianSpec, MarginSet};
use crate::normal;
use nalgebra::{DMatrix, DVector};
use rand::distr::Open01;
use rand::Rng;
use rand_distr::StandardNormal;

/// Redraw limit for the (rounding-only) case where a tail draw lands exactly
/// on its half-space boundary.
const MAX_BOUNDARY_REDRAWS: usize = 64;

#[derive(Debug, Clone)]
pub struct MixtureSampler {
    /// Polytope row behind each component.
    rows: Vec<usize>,
    /// Row normals `w_k` of the components (J' x n).
    normals: DMatrix<f64>,
    /// Unit directions `S^1/2 w_k / ||S^1/2 w_k||` (J' x n).
    directions: DMatrix<f64>,
    thresholds: Vec<f64>,
    deltas: Vec<f64>,
    weights: Vec<f64>,
    cumulative: Vec<f64>,
    tail_probs: Vec<f64>,
    bound: f64,
    gaussian: GaussianSpec,
}

impl MixtureSampler {
    /// Builds the mixture over the stochastic rows of `m`.
    pub fn new(poly: &FeasibilityPolytope, m: &MarginSet, g: &GaussianSpec) -> Result<Self> {
        if poly.n_rows() != m.n_rows() || poly.dim() != g.dim() {
            return Err(Error::Parameter(
                "polytope, margins and covariance disagree in size".into(),
            ));
        }
        let rows: Vec<usize> = m.stochastic_rows().collect();
        if rows.is_empty() {
            return Err(Error::NoUncertainty);
        }
        let n = poly.dim();
        let k = rows.len();
        let normals = DMatrix::from_fn(k, n, |r, c| poly.normals[(rows[r], c)]);
        let directions =
            DMatrix::from_fn(k, n, |r, c| m.sqrt_normals[(rows[r], c)] / m.scale[rows[r]]);
        let thresholds: Vec<f64> = rows.iter().map(|&i| m.beta[i]).collect();
        let deltas: Vec<f64> = rows.iter().map(|&i| m.delta[i]).collect();
        let tail_probs: Vec<f64> = thresholds.iter().map(|&b| normal::sf(b)).collect();

        let total: f64 = tail_probs.iter().sum();
        let largest = tail_probs.iter().copied().fold(0.0_f64, f64::max);
        if !(largest > 0.0) {
            return Err(Error::Numerical(
                "all tail probabilities underflow to zero".into(),
            ));
        }
        let weights: Vec<f64> = tail_probs.iter().map(|p| p / total).collect();
        let mut acc = 0.0;
        let mut cumulative: Vec<f64> = weights
            .iter()
            .map(|w| {
                acc += w;
                acc
            })
            .collect();
        *cumulative.last_mut().expect("nonempty") = 1.0;

        Ok(Self {
            rows,
            normals,
            directions,
            thresholds,
            deltas,
            weights,
            cumulative,
            tail_probs,
            bound: total / largest,
            gaussian: g.clone(),
        })
    }

    pub fn n_components(&self) -> usize {
        self.rows.len()
    }

    /// Polytope row index of each component.
    pub fn rows(&self) -> &[usize] {
        &self.rows
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn tail_probs(&self) -> &[f64] {
        &self.tail_probs
    }

    pub fn thresholds(&self) -> &[f64] {
        &self.thresholds
    }

    pub fn directions(&self) -> &DMatrix<f64> {
        &self.directions
    }

    /// Density-ratio bound `M`.
    pub fn bound(&self) -> f64 {
        self.bound
    }

    /// Draws from component `k`: the nominal Gaussian conditioned on
    /// `w_k^T xi > delta_k`.
    ///
    /// The standardized coordinate along the component direction is drawn by
    /// inverting the survival function, `y = Phi_bar^-1(p_k u)`, which stays
    /// accurate far into the tail. The orthogonal complement is an
    /// unconditioned standard normal.
    pub fn sample_tail<R: Rng + ?Sized>(&self, k: usize, rng: &mut R) -> DVector<f64> {
        assert!(k < self.n_components(), "component {k} out of range");
        let n = self.directions.ncols();
        let phi = self.directions.row(k).transpose();
        let mut xi = DVector::zeros(n);
        for _ in 0..MAX_BOUNDARY_REDRAWS {
            let z = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
            let u: f64 = rng.sample(Open01);
            let y = normal::inverse_sf(self.tail_probs[k] * u);
            let along = phi.dot(&z);
            let zeta = &z + &phi * (y - along);
            xi = &self.gaussian.cov_sqrt * zeta;
            if self.normals.row(k).transpose().dot(&xi) > self.deltas[k] {
                break;
            }
        }
        xi
    }

    /// Draws a component with probability `alpha_k`, then a sample from it.
    /// Returns the scenario and the component index.
    pub fn sample_mixture<R: Rng + ?Sized>(&self, rng: &mut R) -> (DVector<f64>, usize) {
        let k = if self.n_components() == 1 {
            0
        } else {
            let u: f64 = rng.random();
            self.cumulative
                .partition_point(|&c| c <= u)
                .min(self.n_components() - 1)
        };
        (self.sample_tail(k, rng), k)
    }

    /// `ln q_D(xi)`; `-inf` inside the inner region.
    pub fn mixture_ln_pdf(&self, xi: &DVector<f64>) -> Result<f64> {
        let ln_nominal = self.gaussian.ln_density(xi)?;
        let violations = &self.normals * xi;
        let factor: f64 = (0..self.n_components())
            .filter(|&k| violations[k] > self.deltas[k])
            .map(|k| self.weights[k] / self.tail_probs[k])
            .sum();
        Ok(if factor > 0.0 {
            ln_nominal + factor.ln()
        } else {
            f64::NEG_INFINITY
        })
    }

    /// Mixture density `q_D(xi) = sum_k alpha_k q_{D_k}(xi)`.
    pub fn mixture_pdf(&self, xi: &DVector<f64>) -> Result<f64> {
        self.mixture_ln_pdf(xi).map(f64::exp)
    }
}
