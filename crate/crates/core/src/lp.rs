//! Dense revised simplex for small linear programs
//!
//! ```text
//! minimize    c^T x + offset
//! subject to  a_i^T x <= r_i      (every row)
//!             l_j <= x_j <= u_j   (bounds may be infinite)
//! ```
//!
//! Rows get a slack `s_i >= 0`; rows whose slack would start negative get an
//! artificial variable instead, and a first phase drives the artificials to
//! zero. Nonbasic variables sit at one of their bounds (free ones at zero),
//! so bound flips are handled without a basis change. The basis inverse is
//! kept explicitly, updated by rank-one pivots and rebuilt from scratch every
//! `REFACTOR_EVERY` pivots. Dantzig pricing is used until a run of degenerate
//! pivots, after which Bland's rule takes over until progress resumes.

use crate::error::{Error, Result};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

const PIVOT_TOL: f64 = 1e-9;
const PRIMAL_TOL: f64 = 1e-9;
const DUAL_TOL: f64 = 1e-9;
/// Feasibility tolerance for accepting an optimal point.
pub const FEASIBILITY_TOL: f64 = 1e-7;
const REFACTOR_EVERY: usize = 100;
const DEGENERATE_STREAK: usize = 30;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Constraint {
    pub coeffs: Vec<f64>,
    pub rhs: f64,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearProgram {
    pub objective: Vec<f64>,
    /// Constant added to the objective value.
    pub offset: f64,
    pub rows: Vec<Constraint>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl LinearProgram {
    /// Minimization over free variables with no rows yet.
    pub fn new(objective: Vec<f64>) -> Self {
        let n = objective.len();
        Self {
            objective,
            offset: 0.0,
            rows: Vec::new(),
            lower: vec![f64::NEG_INFINITY; n],
            upper: vec![f64::INFINITY; n],
        }
    }

    pub fn n_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn add_row(&mut self, coeffs: Vec<f64>, rhs: f64, label: impl Into<String>) {
        self.rows.push(Constraint {
            coeffs,
            rhs,
            label: label.into(),
        });
    }

    pub fn set_bounds(&mut self, var: usize, lower: f64, upper: f64) {
        self.lower[var] = lower;
        self.upper[var] = upper;
    }

    fn validate(&self) -> Result<()> {
        let n = self.n_vars();
        if n == 0 {
            return Err(Error::Parameter("linear program has no variables".into()));
        }
        if self.lower.len() != n || self.upper.len() != n {
            return Err(Error::Parameter(
                "bound vectors do not match variable count".into(),
            ));
        }
        if self.objective.iter().any(|c| !c.is_finite()) || !self.offset.is_finite() {
            return Err(Error::Parameter(
                "objective has non-finite coefficients".into(),
            ));
        }
        for (i, row) in self.rows.iter().enumerate() {
            if row.coeffs.len() != n {
                return Err(Error::Parameter(format!(
                    "row {i} has {} coefficients",
                    row.coeffs.len()
                )));
            }
            if row.coeffs.iter().any(|a| !a.is_finite()) || row.rhs.is_nan() {
                return Err(Error::Parameter(format!(
                    "row {i} ({}) is not finite",
                    row.label
                )));
            }
        }
        for j in 0..n {
            let (l, u) = (self.lower[j], self.upper[j]);
            if l.is_nan() || u.is_nan() || l > u || l == f64::INFINITY || u == f64::NEG_INFINITY {
                return Err(Error::Parameter(format!(
                    "variable {j} has bounds [{l}, {u}]"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub status: LpStatus,
    /// Primal point; meaningful only when optimal.
    pub x: Vec<f64>,
    /// Objective including the offset; NaN unless optimal.
    pub objective: f64,
    /// Rows holding with equality (within [`FEASIBILITY_TOL`]) at the optimum.
    pub active_rows: Vec<usize>,
    /// Phase-one residual `sum of artificials` when infeasible, else 0.
    pub infeasibility: f64,
    /// Variable along which the objective decreases without bound.
    pub unbounded_var: Option<usize>,
    pub iterations: usize,
}

/// Solves `lp`. Infeasible and unbounded problems are reported through the
/// status; an `Err` means the solver itself failed (iteration limit or loss
/// of accuracy).
pub fn solve(lp: &LinearProgram) -> Result<LpSolution> {
    lp.validate()?;
    let mut s = Simplex::new(lp);
    s.run()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Phase {
    One,
    Two,
}

struct Simplex<'a> {
    lp: &'a LinearProgram,
    m: usize,
    n: usize,
    /// Lower/upper bounds for structurals, slacks and artificials.
    lower: Vec<f64>,
    upper: Vec<f64>,
    /// Current value of every column.
    value: Vec<f64>,
    /// Basis position of each column, if basic.
    position: Vec<Option<usize>>,
    basis: Vec<usize>,
    binv: DMatrix<f64>,
    /// Artificials that were placed in the initial basis.
    art_used: Vec<bool>,
    rhs: Vec<f64>,
    iterations: usize,
    since_refactor: usize,
    degenerate_run: usize,
}

impl<'a> Simplex<'a> {
    fn new(lp: &'a LinearProgram) -> Self {
        let m = lp.n_rows();
        let n = lp.n_vars();
        let total = n + 2 * m;
        let mut lower = vec![0.0; total];
        let mut upper = vec![f64::INFINITY; total];
        lower[..n].copy_from_slice(&lp.lower);
        upper[..n].copy_from_slice(&lp.upper);

        let mut value = vec![0.0; total];
        for j in 0..n {
            value[j] = if lp.lower[j].is_finite() {
                lp.lower[j]
            } else if lp.upper[j].is_finite() {
                lp.upper[j]
            } else {
                0.0
            };
        }

        let rhs: Vec<f64> = lp.rows.iter().map(|r| r.rhs).collect();
        let mut basis = Vec::with_capacity(m);
        let mut position = vec![None; total];
        let mut binv = DMatrix::zeros(m, m);
        let mut art_used = vec![false; m];
        for (i, row) in lp.rows.iter().enumerate() {
            let activity: f64 = row.coeffs.iter().zip(&value[..n]).map(|(a, x)| a * x).sum();
            let residual = row.rhs - activity;
            if residual >= 0.0 {
                let col = n + i;
                basis.push(col);
                position[col] = Some(i);
                value[col] = residual;
                binv[(i, i)] = 1.0;
            } else {
                let col = n + m + i;
                basis.push(col);
                position[col] = Some(i);
                value[col] = -residual;
                binv[(i, i)] = -1.0;
                art_used[i] = true;
            }
        }
        // Artificials that never entered are fixed at zero.
        for i in 0..m {
            if !art_used[i] {
                upper[n + m + i] = 0.0;
            }
        }

        Self {
            lp,
            m,
            n,
            lower,
            upper,
            value,
            position,
            basis,
            binv,
            art_used,
            rhs,
            iterations: 0,
            since_refactor: 0,
            degenerate_run: 0,
        }
    }

    fn is_artificial(&self, col: usize) -> bool {
        col >= self.n + self.m
    }

    fn cost(&self, col: usize, phase: Phase) -> f64 {
        match phase {
            Phase::One => {
                if self.is_artificial(col) {
                    1.0
                } else {
                    0.0
                }
            }
            Phase::Two => {
                if col < self.n {
                    self.lp.objective[col]
                } else {
                    0.0
                }
            }
        }
    }

    /// `y^T a_col` for the constraint column of `col`.
    fn column_dot(&self, col: usize, y: &[f64]) -> f64 {
        if col < self.n {
            self.lp
                .rows
                .iter()
                .zip(y)
                .map(|(r, yi)| r.coeffs[col] * yi)
                .sum()
        } else if col < self.n + self.m {
            y[col - self.n]
        } else {
            -y[col - self.n - self.m]
        }
    }

    /// `B^-1 a_col`.
    fn ftran(&self, col: usize) -> Vec<f64> {
        let m = self.m;
        if col < self.n {
            let a: Vec<f64> = self.lp.rows.iter().map(|r| r.coeffs[col]).collect();
            (0..m)
                .map(|i| (0..m).map(|k| self.binv[(i, k)] * a[k]).sum())
                .collect()
        } else if col < self.n + m {
            self.binv.column(col - self.n).iter().copied().collect()
        } else {
            self.binv
                .column(col - self.n - m)
                .iter()
                .map(|v| -v)
                .collect()
        }
    }

    fn duals(&self, phase: Phase) -> Vec<f64> {
        let m = self.m;
        let cb: Vec<f64> = self.basis.iter().map(|&c| self.cost(c, phase)).collect();
        (0..m)
            .map(|j| (0..m).map(|i| cb[i] * self.binv[(i, j)]).sum())
            .collect()
    }

    /// Rebuilds `B^-1` and the basic values from the nonbasic ones.
    fn refactor(&mut self) -> Result<()> {
        let m = self.m;
        let mut b = DMatrix::zeros(m, m);
        for (p, &col) in self.basis.iter().enumerate() {
            if col < self.n {
                for (i, row) in self.lp.rows.iter().enumerate() {
                    b[(i, p)] = row.coeffs[col];
                }
            } else if col < self.n + m {
                b[(col - self.n, p)] = 1.0;
            } else {
                b[(col - self.n - m, p)] = -1.0;
            }
        }
        self.binv = b
            .try_inverse()
            .ok_or_else(|| Error::Numerical("basis matrix became singular".into()))?;

        // r - N x_N
        let mut resid = self.rhs.clone();
        for col in 0..self.value.len() {
            if self.position[col].is_some() || self.value[col] == 0.0 {
                continue;
            }
            let v = self.value[col];
            if col < self.n {
                for (i, row) in self.lp.rows.iter().enumerate() {
                    resid[i] -= row.coeffs[col] * v;
                }
            } else if col < self.n + m {
                resid[col - self.n] -= v;
            } else {
                resid[col - self.n - m] += v;
            }
        }
        for p in 0..m {
            let v: f64 = (0..m).map(|k| self.binv[(p, k)] * resid[k]).sum();
            self.value[self.basis[p]] = v;
        }
        self.since_refactor = 0;
        Ok(())
    }

    fn iteration_limit(&self) -> usize {
        100 * (self.m + self.n) + 10_000
    }

    /// Runs one phase to optimality. Returns the unbounded column, if any.
    fn optimize(&mut self, phase: Phase) -> Result<Option<usize>> {
        let obj_scale = match phase {
            Phase::One => 1.0,
            Phase::Two => self
                .lp
                .objective
                .iter()
                .fold(1.0_f64, |a, c| a.max(c.abs())),
        };
        let dual_tol = DUAL_TOL * obj_scale;

        loop {
            if self.iterations >= self.iteration_limit() {
                return Err(Error::Numerical(format!(
                    "simplex iteration limit ({}) reached",
                    self.iteration_limit()
                )));
            }
            if self.since_refactor >= REFACTOR_EVERY {
                self.refactor()?;
            }
            let bland = self.degenerate_run >= DEGENERATE_STREAK;

            // Pricing.
            let y = self.duals(phase);
            let mut entering: Option<(usize, f64, f64)> = None; // (col, d_j, direction)
            for col in 0..self.value.len() {
                if self.position[col].is_some() {
                    continue;
                }
                if self.is_artificial(col)
                    && (phase == Phase::Two || !self.art_used[col - self.n - self.m])
                {
                    continue;
                }
                let (l, u) = (self.lower[col], self.upper[col]);
                if l == u {
                    continue;
                }
                let d = self.cost(col, phase) - self.column_dot(col, &y);
                let x = self.value[col];
                let can_increase = x < u - PRIMAL_TOL || u == f64::INFINITY;
                let can_decrease = x > l + PRIMAL_TOL || l == f64::NEG_INFINITY;
                let dir = if d < -dual_tol && can_increase {
                    1.0
                } else if d > dual_tol && can_decrease {
                    -1.0
                } else {
                    continue;
                };
                let better = match entering {
                    None => true,
                    Some((_, best, _)) => !bland && d.abs() > best.abs(),
                };
                if better {
                    entering = Some((col, d, dir));
                }
                if bland {
                    break;
                }
            }
            let Some((col, _, dir)) = entering else {
                return Ok(None);
            };

            // Ratio test along x_col += dir * t, x_B -= dir * t * w.
            let w = self.ftran(col);
            let mut theta = self.upper[col] - self.lower[col];
            let mut leaving: Option<usize> = None;
            let mut best_pivot = 0.0;
            let mut candidates: Vec<(usize, f64)> = Vec::new();
            let mut min_ratio = f64::INFINITY;
            for p in 0..self.m {
                let delta = dir * w[p];
                if delta.abs() <= PIVOT_TOL {
                    continue;
                }
                let bcol = self.basis[p];
                let xb = self.value[bcol];
                let ratio = if delta > 0.0 {
                    let l = self.lower[bcol];
                    if l == f64::NEG_INFINITY {
                        continue;
                    }
                    ((xb - l) / delta).max(0.0)
                } else {
                    let u = self.upper[bcol];
                    if u == f64::INFINITY {
                        continue;
                    }
                    ((u - xb) / -delta).max(0.0)
                };
                min_ratio = min_ratio.min(ratio);
                candidates.push((p, ratio));
            }
            if min_ratio < theta {
                let cutoff = min_ratio + 1e-12 * (1.0 + min_ratio);
                for &(p, ratio) in &candidates {
                    if ratio > cutoff {
                        continue;
                    }
                    let take = match leaving {
                        None => true,
                        Some(q) => {
                            if bland {
                                self.basis[p] < self.basis[q]
                            } else {
                                w[p].abs() > best_pivot
                            }
                        }
                    };
                    if take {
                        leaving = Some(p);
                        best_pivot = w[p].abs();
                    }
                }
                theta = min_ratio;
            }

            if theta == f64::INFINITY {
                return match phase {
                    Phase::Two => Ok(Some(col)),
                    Phase::One => Err(Error::Numerical("unbounded ray in phase one".into())),
                };
            }

            self.iterations += 1;
            if theta <= PRIMAL_TOL {
                self.degenerate_run += 1;
            } else {
                self.degenerate_run = 0;
            }

            // Move.
            self.value[col] += dir * theta;
            for p in 0..self.m {
                if w[p] != 0.0 {
                    let bcol = self.basis[p];
                    self.value[bcol] -= dir * theta * w[p];
                }
            }

            let Some(r) = leaving else {
                // Bound flip: the entering variable reached its other bound.
                self.value[col] = if dir > 0.0 {
                    self.upper[col]
                } else {
                    self.lower[col]
                };
                continue;
            };

            let out = self.basis[r];
            let delta = dir * w[r];
            self.value[out] = if delta > 0.0 {
                self.lower[out]
            } else {
                self.upper[out]
            };
            self.position[out] = None;
            self.position[col] = Some(r);
            self.basis[r] = col;

            let pivot = w[r];
            for k in 0..self.m {
                self.binv[(r, k)] /= pivot;
            }
            for i in 0..self.m {
                if i != r && w[i] != 0.0 {
                    let f = w[i];
                    for k in 0..self.m {
                        let v = self.binv[(r, k)];
                        if v != 0.0 {
                            self.binv[(i, k)] -= f * v;
                        }
                    }
                }
            }
            self.since_refactor += 1;
        }
    }

    fn run(&mut self) -> Result<LpSolution> {
        let rhs_scale = self.rhs.iter().fold(1.0_f64, |a, r| a.max(r.abs()));
        if self.art_used.iter().any(|&a| a) {
            self.optimize(Phase::One)?;
            self.refactor()?;
            let infeasibility: f64 = (0..self.m)
                .filter(|&i| self.art_used[i])
                .map(|i| self.value[self.n + self.m + i].max(0.0))
                .sum();
            if infeasibility > 1e-9 * rhs_scale {
                return Ok(self.finish(LpStatus::Infeasible, infeasibility, None));
            }
            for i in 0..self.m {
                let col = self.n + self.m + i;
                self.upper[col] = 0.0;
                if self.position[col].is_none() {
                    self.value[col] = 0.0;
                }
            }
            self.degenerate_run = 0;
        }

        if let Some(col) = self.optimize(Phase::Two)? {
            return Ok(self.finish(LpStatus::Unbounded, 0.0, Some(col)));
        }
        self.refactor()?;

        let x: Vec<f64> = self.value[..self.n].to_vec();
        for (i, row) in self.lp.rows.iter().enumerate() {
            let act: f64 = row.coeffs.iter().zip(&x).map(|(a, v)| a * v).sum();
            if act - row.rhs > FEASIBILITY_TOL * row.rhs.abs().max(1.0) {
                return Err(Error::Numerical(format!(
                    "row {i} ({}) violated by {:e} at the reported optimum",
                    row.label,
                    act - row.rhs
                )));
            }
        }
        for j in 0..self.n {
            if x[j] < self.lp.lower[j] - FEASIBILITY_TOL * self.lp.lower[j].abs().max(1.0)
                || x[j] > self.lp.upper[j] + FEASIBILITY_TOL * self.lp.upper[j].abs().max(1.0)
            {
                return Err(Error::Numerical(format!("variable {j} left its bounds")));
            }
        }
        Ok(self.finish(LpStatus::Optimal, 0.0, None))
    }

    fn finish(
        &self,
        status: LpStatus,
        infeasibility: f64,
        unbounded_var: Option<usize>,
    ) -> LpSolution {
        let x: Vec<f64> = self.value[..self.n].to_vec();
        let (objective, active_rows) = if status == LpStatus::Optimal {
            let obj = self.lp.offset
                + self
                    .lp
                    .objective
                    .iter()
                    .zip(&x)
                    .map(|(c, v)| c * v)
                    .sum::<f64>();
            let active = self
                .lp
                .rows
                .iter()
                .enumerate()
                .filter(|(_, row)| {
                    let act: f64 = row.coeffs.iter().zip(&x).map(|(a, v)| a * v).sum();
                    row.rhs - act <= FEASIBILITY_TOL * row.rhs.abs().max(1.0)
                })
                .map(|(i, _)| i)
                .collect();
            (obj, active)
        } else {
            (f64::NAN, Vec::new())
        };
        LpSolution {
            status,
            x,
            objective,
            active_rows,
            infeasibility,
            unbounded_var,
            iterations: self.iterations,
        }
    }
}
