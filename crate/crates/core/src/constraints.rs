//! Linear equality and inequality constraints `F v = f`, `G v <= g` and
//! per-step violation bookkeeping.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;
use crate::qp::{self, QuadraticProgram};

/// Tolerance used when certifying that a constraint set is nonempty.
pub const FEASIBILITY_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct LinearConstraints {
    f: DMatrix<f64>,
    f_rhs: DVector<f64>,
    g: DMatrix<f64>,
    g_rhs: DVector<f64>,
    labels: Vec<String>,
}

/// Slack allowed before a row counts as violated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ViolationTolerance {
    /// Fixed slack for every row.
    Absolute(f64),
    /// Slack `tol * (1 + |rhs_i|)` for row `i`.
    Relative(f64),
}

impl Default for ViolationTolerance {
    fn default() -> Self {
        ViolationTolerance::Relative(1e-9)
    }
}

impl ViolationTolerance {
    pub fn slack(&self, rhs: f64) -> f64 {
        match *self {
            ViolationTolerance::Absolute(t) => t,
            ViolationTolerance::Relative(t) => t * (1.0 + rhs.abs()),
        }
    }
}

impl LinearConstraints {
    /// Build and certify that `{v : F v = f, G v <= g}` is nonempty.
    pub fn new(f: DMatrix<f64>, f_rhs: DVector<f64>, g: DMatrix<f64>, g_rhs: DVector<f64>) -> Result<Self> {
        let d = f.ncols().max(g.ncols());
        Self::with_dim(d, f, f_rhs, g, g_rhs)
    }

    /// Like [`LinearConstraints::new`], with the state dimension given explicitly
    /// so that empty blocks still carry it.
    pub fn with_dim(d: usize, f: DMatrix<f64>, f_rhs: DVector<f64>, g: DMatrix<f64>, g_rhs: DVector<f64>) -> Result<Self> {
        let f = if f.nrows() == 0 { DMatrix::zeros(0, d) } else { f };
        let g = if g.nrows() == 0 { DMatrix::zeros(0, d) } else { g };
        if f.ncols() != d {
            return Err(Error::DimensionMismatch {
                what: "equality constraint columns",
                expected: d,
                found: f.ncols(),
            });
        }
        if g.ncols() != d {
            return Err(Error::DimensionMismatch {
                what: "inequality constraint columns",
                expected: d,
                found: g.ncols(),
            });
        }
        linalg::check_len("equality constraint right-hand side", &f_rhs, f.nrows())?;
        linalg::check_len("inequality constraint right-hand side", &g_rhs, g.nrows())?;
        if f.iter().chain(f_rhs.iter()).chain(g.iter()).chain(g_rhs.iter()).any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("constraint data".into()));
        }
        let labels = (0..f.nrows())
            .map(|i| format!("eq{i}"))
            .chain((0..g.nrows()).map(|i| format!("ineq{i}")))
            .collect();
        let c = LinearConstraints {
            f,
            f_rhs,
            g,
            g_rhs,
            labels,
        };
        if c.num_rows() > 0 && c.feasible_point().is_none() {
            return Err(Error::infeasible());
        }
        Ok(c)
    }

    /// No constraints on a `d`-dimensional state.
    pub fn none(d: usize) -> Self {
        LinearConstraints {
            f: DMatrix::zeros(0, d),
            f_rhs: DVector::zeros(0),
            g: DMatrix::zeros(0, d),
            g_rhs: DVector::zeros(0),
            labels: Vec::new(),
        }
    }

    /// Componentwise `lower <= v <= upper`: all lower-bound rows first, then all upper-bound rows.
    pub fn bounds(lower: &DVector<f64>, upper: &DVector<f64>) -> Result<Self> {
        let d = lower.len();
        linalg::check_len("upper bounds", upper, d)?;
        let mut g = DMatrix::zeros(2 * d, d);
        let mut rhs = DVector::zeros(2 * d);
        for i in 0..d {
            g[(i, i)] = -1.0;
            rhs[i] = -lower[i];
            g[(d + i, i)] = 1.0;
            rhs[d + i] = upper[i];
        }
        let mut c = Self::with_dim(d, DMatrix::zeros(0, d), DVector::zeros(0), g, rhs)?;
        c.labels = (0..d)
            .map(|i| format!("lower{i}"))
            .chain((0..d).map(|i| format!("upper{i}")))
            .collect();
        Ok(c)
    }

    /// Replace the row labels used in reports.
    pub fn with_labels(mut self, labels: Vec<String>) -> Result<Self> {
        if labels.len() != self.num_rows() {
            return Err(Error::DimensionMismatch {
                what: "constraint labels",
                expected: self.num_rows(),
                found: labels.len(),
            });
        }
        self.labels = labels;
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.f.ncols()
    }

    pub fn num_eq(&self) -> usize {
        self.f.nrows()
    }

    pub fn num_in(&self) -> usize {
        self.g.nrows()
    }

    /// Equality rows followed by inequality rows.
    pub fn num_rows(&self) -> usize {
        self.num_eq() + self.num_in()
    }

    pub fn is_empty(&self) -> bool {
        self.num_rows() == 0
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn f(&self) -> &DMatrix<f64> {
        &self.f
    }

    pub fn f_rhs(&self) -> &DVector<f64> {
        &self.f_rhs
    }

    pub fn g(&self) -> &DMatrix<f64> {
        &self.g
    }

    pub fn g_rhs(&self) -> &DVector<f64> {
        &self.g_rhs
    }

    /// Some point of the constraint set, found by the QP phase-1 search.
    pub fn feasible_point(&self) -> Option<DVector<f64>> {
        let d = self.dim();
        let qp = QuadraticProgram::new(
            DMatrix::zeros(d, d),
            DVector::zeros(d),
            self.f.clone(),
            self.f_rhs.clone(),
            self.g.clone(),
            self.g_rhs.clone(),
        )
        .ok()?;
        qp::find_feasible_point(&qp, FEASIBILITY_TOL)
    }

    /// Indices of violated rows (equalities `0..m_e`, then inequalities `m_e..`).
    pub fn violations(&self, v: &DVector<f64>, tol: ViolationTolerance) -> Vec<usize> {
        let me = self.num_eq();
        let mut out = Vec::new();
        if me > 0 {
            let r = &self.f * v - &self.f_rhs;
            for i in 0..me {
                if !(r[i].abs() <= tol.slack(self.f_rhs[i])) {
                    out.push(i);
                }
            }
        }
        if self.num_in() > 0 {
            let r = &self.g * v - &self.g_rhs;
            for i in 0..self.num_in() {
                if !(r[i] <= tol.slack(self.g_rhs[i])) {
                    out.push(me + i);
                }
            }
        }
        out
    }

    pub fn is_satisfied(&self, v: &DVector<f64>, tol: ViolationTolerance) -> bool {
        self.violations(v, tol).is_empty()
    }

    /// Largest equality residual or inequality excess at `v` (0 when satisfied).
    pub fn max_violation(&self, v: &DVector<f64>) -> f64 {
        let mut m = 0.0_f64;
        if self.num_eq() > 0 {
            m = m.max((&self.f * v - &self.f_rhs).amax());
        }
        if self.num_in() > 0 {
            m = (&self.g * v - &self.g_rhs).iter().fold(m, |a, &b| a.max(b));
        }
        m
    }
}

/// Per-step fraction of members violating each constraint row before re-solving.
#[derive(Debug, Clone, PartialEq)]
pub struct ViolationReport {
    labels: Vec<String>,
    /// `fractions[step][row]`.
    fractions: Vec<Vec<f64>>,
    resolved: Vec<usize>,
}

impl ViolationReport {
    pub fn new(constraints: &LinearConstraints) -> Self {
        ViolationReport {
            labels: constraints.labels().to_vec(),
            fractions: Vec::new(),
            resolved: Vec::new(),
        }
    }

    /// Record one step from each member's violated-row list and the number of re-solved members.
    pub fn push_step(&mut self, member_violations: &[Vec<usize>], resolved: usize) {
        let n = member_violations.len().max(1) as f64;
        let mut counts = vec![0usize; self.labels.len()];
        for rows in member_violations {
            for &r in rows {
                counts[r] += 1;
            }
        }
        self.fractions.push(counts.into_iter().map(|c| c as f64 / n).collect());
        self.resolved.push(resolved);
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn rows(&self) -> usize {
        self.labels.len()
    }

    pub fn steps(&self) -> usize {
        self.fractions.len()
    }

    pub fn fraction(&self, row: usize, step: usize) -> f64 {
        self.fractions[step][row]
    }

    /// Members re-solved at each step.
    pub fn resolved(&self) -> &[usize] {
        &self.resolved
    }

    pub fn row_series(&self, row: usize) -> Vec<f64> {
        self.fractions.iter().map(|s| s[row]).collect()
    }

    pub fn any_violation(&self) -> bool {
        self.fractions.iter().flatten().any(|&f| f > 0.0)
    }
}
