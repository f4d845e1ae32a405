//! Dense convex quadratic programming.
//!
//! Solves
//!
//! ```text
//! minimize    1/2 x^T P x + q^T x
//! subject to  A_eq x  = b_eq
//!             A_in x <= b_in
//! ```
//!
//! with a primal active-set method started from a point found by an elastic
//! phase-1 problem. Stationarity is reported in the convention
//! `P x + q + A_eq^T lambda + A_in^T mu = 0`, `mu >= 0`.

mod active_set;
mod brute;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;

pub use brute::brute_force_solve;

#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticProgram {
    pub p: DMatrix<f64>,
    pub q: DVector<f64>,
    pub a_eq: DMatrix<f64>,
    pub b_eq: DVector<f64>,
    pub a_in: DMatrix<f64>,
    pub b_in: DVector<f64>,
}

impl QuadraticProgram {
    pub fn new(
        p: DMatrix<f64>,
        q: DVector<f64>,
        a_eq: DMatrix<f64>,
        b_eq: DVector<f64>,
        a_in: DMatrix<f64>,
        b_in: DVector<f64>,
    ) -> Result<Self> {
        let n = q.len();
        linalg::check_square("QP Hessian", &p, n)?;
        if a_eq.ncols() != n && a_eq.nrows() > 0 {
            return Err(Error::DimensionMismatch {
                what: "equality constraint columns",
                expected: n,
                found: a_eq.ncols(),
            });
        }
        if a_in.ncols() != n && a_in.nrows() > 0 {
            return Err(Error::DimensionMismatch {
                what: "inequality constraint columns",
                expected: n,
                found: a_in.ncols(),
            });
        }
        linalg::check_len("equality right-hand side", &b_eq, a_eq.nrows())?;
        linalg::check_len("inequality right-hand side", &b_in, a_in.nrows())?;
        let finite = p.iter().chain(q.iter()).chain(a_eq.iter()).chain(b_eq.iter());
        if finite.chain(a_in.iter()).chain(b_in.iter()).any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("quadratic program data".into()));
        }
        let scale = p.amax().max(1.0);
        if (&p - p.transpose()).amax() > 1e-12 * scale {
            return Err(Error::InvalidInput("QP Hessian is not symmetric".into()));
        }
        // Zero-row matrices still need the right column count for the algebra below.
        let a_eq = if a_eq.nrows() == 0 { DMatrix::zeros(0, n) } else { a_eq };
        let a_in = if a_in.nrows() == 0 { DMatrix::zeros(0, n) } else { a_in };
        Ok(QuadraticProgram {
            p,
            q,
            a_eq,
            b_eq,
            a_in,
            b_in,
        })
    }

    pub fn unconstrained(p: DMatrix<f64>, q: DVector<f64>) -> Result<Self> {
        let n = q.len();
        Self::new(
            p,
            q,
            DMatrix::zeros(0, n),
            DVector::zeros(0),
            DMatrix::zeros(0, n),
            DVector::zeros(0),
        )
    }

    pub fn dim(&self) -> usize {
        self.q.len()
    }

    pub fn num_eq(&self) -> usize {
        self.a_eq.nrows()
    }

    pub fn num_in(&self) -> usize {
        self.a_in.nrows()
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.p * x)) + self.q.dot(x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QpStatus {
    Optimal,
    Infeasible,
    Unbounded,
    MaxIterations,
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub x: DVector<f64>,
    pub eq_multipliers: DVector<f64>,
    pub in_multipliers: DVector<f64>,
    pub status: QpStatus,
    pub kkt_residual: f64,
    pub iterations: usize,
}

impl QpSolution {
    pub fn is_optimal(&self) -> bool {
        self.status == QpStatus::Optimal
    }
}

#[derive(Debug, Clone, Copy)]
pub struct QpOptions {
    pub tol: f64,
    /// Defaults to `100 * (n + m_in)` when unset.
    pub max_iter: Option<usize>,
}

impl Default for QpOptions {
    fn default() -> Self {
        QpOptions {
            tol: 1e-9,
            max_iter: None,
        }
    }
}

/// Components of the KKT residual at a candidate primal-dual point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KktResidual {
    /// `|P x + q + A_eq^T lambda + A_in^T mu| / (1 + |q| + |P x|)`.
    pub stationarity: f64,
    /// Largest equality residual or inequality excess.
    pub primal: f64,
    /// Magnitude of the most negative inequality multiplier.
    pub dual: f64,
    /// `max_i |mu_i (A_in x - b_in)_i| / (1 + |q| + |P x|)`.
    pub complementarity: f64,
}

impl KktResidual {
    pub fn max(&self) -> f64 {
        self.stationarity
            .max(self.primal)
            .max(self.dual)
            .max(self.complementarity)
    }
}

pub fn kkt_residual(
    qp: &QuadraticProgram,
    x: &DVector<f64>,
    eq_multipliers: &DVector<f64>,
    in_multipliers: &DVector<f64>,
) -> KktResidual {
    // |P x| in the scale keeps the measure meaningful for large Hessians,
    // where rounding in P x alone exceeds any fixed absolute threshold.
    let px = &qp.p * x;
    let scale = 1.0 + qp.q.norm() + px.norm();
    let mut grad = px + &qp.q;
    if qp.num_eq() > 0 {
        grad += qp.a_eq.tr_mul(eq_multipliers);
    }
    if qp.num_in() > 0 {
        grad += qp.a_in.tr_mul(in_multipliers);
    }
    let eq_res = if qp.num_eq() > 0 {
        (&qp.a_eq * x - &qp.b_eq).amax()
    } else {
        0.0
    };
    let slack = &qp.a_in * x - &qp.b_in;
    let in_res = slack.iter().fold(0.0_f64, |m, &s| m.max(s));
    let dual = in_multipliers.iter().fold(0.0_f64, |m, &mu| m.max(-mu));
    let comp = slack
        .iter()
        .zip(in_multipliers.iter())
        .fold(0.0_f64, |m, (&s, &mu)| m.max((s * mu).abs()));
    KktResidual {
        stationarity: grad.norm() / scale,
        primal: eq_res.max(in_res),
        dual,
        complementarity: comp / scale,
    }
}

pub fn solve(qp: &QuadraticProgram, opts: &QpOptions) -> QpSolution {
    active_set::solve(qp, None, opts)
}

/// Like [`solve`], but the feasibility search starts from `hint` (for example
/// the unconstrained minimiser), which usually lands closer to the answer.
pub fn solve_from(qp: &QuadraticProgram, hint: &DVector<f64>, opts: &QpOptions) -> QpSolution {
    active_set::solve(qp, Some(hint), opts)
}

/// A point satisfying the constraints of `qp` within `tol`, if one exists.
pub fn find_feasible_point(qp: &QuadraticProgram, tol: f64) -> Option<DVector<f64>> {
    active_set::feasible_point(qp, None, tol)
}
