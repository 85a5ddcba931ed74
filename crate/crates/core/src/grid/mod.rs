//! DC network model: case data, Laplacian and its pseudo-inverse, incidence
//! and slack-compensation matrices, and the feasibility polytope `W p <= b`.
//!
//! All matrices are in per unit on the case's MVA base.

mod matpower;

pub use matpower::parse_case;

use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};
use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BusKind {
    Slack,
    Generator,
    Load,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bus {
    pub id: u32,
    pub kind: BusKind,
    pub demand_mw: f64,
    /// Net scheduled injection, generation minus demand, in MW.
    pub injection_mw: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Branch {
    /// Index into [`GridCase::buses`].
    pub from: usize,
    pub to: usize,
    /// Series reactance, p.u.
    pub reactance: f64,
    pub rating_mva: f64,
    /// Angle-difference limit in radians; `None` for unlimited branches.
    pub angle_limit: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generator {
    /// Index into [`GridCase::buses`].
    pub bus: usize,
    pub output_mw: f64,
    pub p_min_mw: f64,
    pub p_max_mw: f64,
    /// Linear cost coefficient, $/MWh.
    pub cost: f64,
}

/// A parsed and validated network.
#[derive(Debug, Clone, PartialEq)]
pub struct GridCase {
    pub name: String,
    pub base_mva: f64,
    pub buses: Vec<Bus>,
    pub branches: Vec<Branch>,
    pub generators: Vec<Generator>,
}

impl GridCase {
    pub fn n_buses(&self) -> usize {
        self.buses.len()
    }

    pub fn n_branches(&self) -> usize {
        self.branches.len()
    }

    pub fn slack(&self) -> usize {
        self.buses
            .iter()
            .position(|b| b.kind == BusKind::Slack)
            .expect("validated case has a slack bus")
    }

    /// Nominal injections in p.u.
    pub fn nominal_injections(&self) -> DVector<f64> {
        DVector::from_iterator(
            self.n_buses(),
            self.buses.iter().map(|b| b.injection_mw / self.base_mva),
        )
    }

    /// Bus injection limits in p.u. for buses that host generators.
    ///
    /// Pure load buses have no limits (`None`): their injection is data, not a
    /// decision.
    pub fn injection_limits(&self) -> Vec<Option<(f64, f64)>> {
        let mut limits: Vec<Option<(f64, f64)>> = vec![None; self.n_buses()];
        for g in &self.generators {
            let entry = limits[g.bus].get_or_insert((0.0, 0.0));
            entry.0 += g.p_min_mw;
            entry.1 += g.p_max_mw;
        }
        limits
            .into_iter()
            .zip(&self.buses)
            .map(|(lim, bus)| {
                lim.map(|(lo, hi)| {
                    (
                        (lo - bus.demand_mw) / self.base_mva,
                        (hi - bus.demand_mw) / self.base_mva,
                    )
                })
            })
            .collect()
    }
}

/// Dense DC network matrices.
#[derive(Debug, Clone)]
pub struct GridMatrices {
    /// Admittance Laplacian `B` (n x n).
    pub laplacian: DMatrix<f64>,
    /// Moore-Penrose pseudo-inverse of `B`.
    pub laplacian_pinv: DMatrix<f64>,
    /// Branch-bus incidence `A` (m x n), `+1` at the from bus and `-1` at the to bus.
    pub incidence: DMatrix<f64>,
    /// Slack compensation `C` (n x n). `(C p)_slack = -sum_{i != slack} p_i`.
    pub slack_comp: DMatrix<f64>,
    pub slack: usize,
}

/// Relative eigenvalue cutoff for the pseudo-inverse.
const PINV_CUTOFF: f64 = 1e-9;

pub fn build_matrices(case: &GridCase) -> Result<GridMatrices> {
    let n = case.n_buses();
    let m = case.n_branches();
    let slack = case.slack();

    let mut laplacian = DMatrix::zeros(n, n);
    let mut incidence = DMatrix::zeros(m, n);
    for (k, br) in case.branches.iter().enumerate() {
        let y = 1.0 / br.reactance;
        laplacian[(br.from, br.to)] -= y;
        laplacian[(br.to, br.from)] -= y;
        laplacian[(br.from, br.from)] += y;
        laplacian[(br.to, br.to)] += y;
        incidence[(k, br.from)] = 1.0;
        incidence[(k, br.to)] = -1.0;
    }

    let laplacian_pinv = pseudo_inverse(&laplacian)?;

    let mut slack_comp = DMatrix::zeros(n, n);
    for i in (0..n).filter(|&i| i != slack) {
        slack_comp[(i, i)] = 1.0;
        slack_comp[(slack, i)] = -1.0;
    }

    Ok(GridMatrices {
        laplacian,
        laplacian_pinv,
        incidence,
        slack_comp,
        slack,
    })
}

/// Pseudo-inverse of a symmetric matrix by eigendecomposition, dropping
/// eigenvalues below `PINV_CUTOFF * max |lambda|`.
pub(crate) fn pseudo_inverse(sym: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = SymmetricEigen::try_new(sym.clone(), f64::EPSILON, 10_000)
        .ok_or_else(|| Error::Numerical("eigendecomposition did not converge".into()))?;
    let lambda_max = eig.eigenvalues.iter().fold(0.0_f64, |a, &l| a.max(l.abs()));
    let cutoff = PINV_CUTOFF * lambda_max;
    let n = sym.nrows();
    let mut pinv = DMatrix::zeros(n, n);
    for (k, &lambda) in eig.eigenvalues.iter().enumerate() {
        if lambda.abs() > cutoff {
            let v = eig.eigenvectors.column(k);
            pinv += (v * v.transpose()) / lambda;
        }
    }
    // Symmetrize away rounding.
    let sym_pinv = (&pinv + pinv.transpose()) * 0.5;
    Ok(sym_pinv)
}

/// Which limit a polytope row encodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RowLabel {
    AngleUpper {
        branch: usize,
    },
    AngleLower {
        branch: usize,
    },
    InjectionUpper {
        bus: usize,
    },
    InjectionLower {
        bus: usize,
    },
    /// A row of a polytope not derived from a network.
    Generic(usize),
}

impl fmt::Display for RowLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RowLabel::AngleUpper { branch } => write!(f, "angle-upper[{branch}]"),
            RowLabel::AngleLower { branch } => write!(f, "angle-lower[{branch}]"),
            RowLabel::InjectionUpper { bus } => write!(f, "injection-upper[{bus}]"),
            RowLabel::InjectionLower { bus } => write!(f, "injection-lower[{bus}]"),
            RowLabel::Generic(i) => write!(f, "row[{i}]"),
        }
    }
}

/// The polytope `{p : W p <= b}`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeasibilityPolytope {
    /// Row normals, J x n.
    pub normals: DMatrix<f64>,
    /// Offsets, length J.
    pub offsets: DVector<f64>,
    pub labels: Vec<RowLabel>,
}

impl FeasibilityPolytope {
    /// Polytope from explicit rows, labelled `Generic(i)`.
    pub fn new(normals: DMatrix<f64>, offsets: DVector<f64>) -> Result<Self> {
        if normals.nrows() != offsets.len() {
            return Err(Error::Parameter(format!(
                "{} normals but {} offsets",
                normals.nrows(),
                offsets.len()
            )));
        }
        let labels = (0..offsets.len()).map(RowLabel::Generic).collect();
        Ok(Self {
            normals,
            offsets,
            labels,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.offsets.len()
    }

    pub fn dim(&self) -> usize {
        self.normals.ncols()
    }

    /// `b - W p`; nonnegative entries mean the row holds.
    pub fn slack(&self, p: &DVector<f64>) -> DVector<f64> {
        &self.offsets - &self.normals * p
    }

    pub fn contains(&self, p: &DVector<f64>, tol: f64) -> bool {
        self.slack(p).iter().all(|&s| s >= -tol)
    }

    /// Same rows with offsets replaced.
    pub fn with_offsets(&self, offsets: DVector<f64>) -> Self {
        assert_eq!(offsets.len(), self.n_rows());
        Self {
            normals: self.normals.clone(),
            offsets,
            labels: self.labels.clone(),
        }
    }
}

/// Stacks angle rows `+-A B^+ C` for rated branches, then injection rows
/// `+-C` for buses with finite limits, in the order angle-upper,
/// angle-lower, injection-upper, injection-lower.
pub fn build_polytope(case: &GridCase, mat: &GridMatrices) -> FeasibilityPolytope {
    let n = case.n_buses();
    let ptdf = &mat.incidence * &mat.laplacian_pinv * &mat.slack_comp;

    let rated: Vec<(usize, f64)> = case
        .branches
        .iter()
        .enumerate()
        .filter_map(|(k, br)| br.angle_limit.map(|lim| (k, lim)))
        .collect();
    let limited: Vec<(usize, (f64, f64))> = case
        .injection_limits()
        .into_iter()
        .enumerate()
        .filter_map(|(i, lim)| lim.map(|l| (i, l)))
        .collect();

    let j = 2 * rated.len() + 2 * limited.len();
    let mut normals = DMatrix::zeros(j, n);
    let mut offsets = DVector::zeros(j);
    let mut labels = Vec::with_capacity(j);
    let mut row = 0;

    for sign in [1.0, -1.0] {
        for &(k, lim) in &rated {
            normals.row_mut(row).copy_from(&(ptdf.row(k) * sign));
            offsets[row] = lim;
            labels.push(if sign > 0.0 {
                RowLabel::AngleUpper { branch: k }
            } else {
                RowLabel::AngleLower { branch: k }
            });
            row += 1;
        }
    }
    for upper in [true, false] {
        for &(i, (lo, hi)) in &limited {
            let sign = if upper { 1.0 } else { -1.0 };
            normals
                .row_mut(row)
                .copy_from(&(mat.slack_comp.row(i) * sign));
            offsets[row] = if upper { hi } else { -lo };
            labels.push(if upper {
                RowLabel::InjectionUpper { bus: i }
            } else {
                RowLabel::InjectionLower { bus: i }
            });
            row += 1;
        }
    }
    debug_assert_eq!(row, j);

    FeasibilityPolytope {
        normals,
        offsets,
        labels,
    }
}
