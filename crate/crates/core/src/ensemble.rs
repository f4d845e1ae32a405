//! Ensemble container and its empirical statistics.
//!
//! The anomaly map `B b = (1/D) sum_m b_m e^(m)` (with `D` the covariance
//! divisor) is what every range-of-covariance update works with: for any
//! `a`, `C a = B b` with `b_m = <e^(m), a>`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{self, RangeBasis};

/// Normalisation of the empirical covariance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Divisor {
    /// `1/N`, the default.
    #[default]
    N,
    /// `1/(N-1)`, the unbiased variant.
    NMinusOne,
}

impl Divisor {
    pub fn value(self, n: usize) -> f64 {
        match self {
            Divisor::N => n as f64,
            Divisor::NMinusOne => (n - 1) as f64,
        }
    }
}

/// N state vectors of a common dimension d, stored as the columns of a d x N matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    members: DMatrix<f64>,
}

impl Ensemble {
    pub fn new(members: Vec<DVector<f64>>) -> Result<Self> {
        let n = members.len();
        if n < 2 {
            return Err(Error::InvalidInput(format!(
                "an ensemble needs at least 2 members, got {n}"
            )));
        }
        let d = members[0].len();
        if d == 0 {
            return Err(Error::InvalidInput("ensemble members are empty".into()));
        }
        let mut m = DMatrix::zeros(d, n);
        for (j, v) in members.iter().enumerate() {
            linalg::check_len("ensemble member", v, d)?;
            m.set_column(j, v);
        }
        Self::from_matrix(m)
    }

    /// Build from a d x N matrix whose columns are the members.
    pub fn from_matrix(members: DMatrix<f64>) -> Result<Self> {
        if members.ncols() < 2 {
            return Err(Error::InvalidInput(format!(
                "an ensemble needs at least 2 members, got {}",
                members.ncols()
            )));
        }
        if members.nrows() == 0 {
            return Err(Error::InvalidInput("ensemble members are empty".into()));
        }
        for (j, col) in members.column_iter().enumerate() {
            if col.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite(format!("ensemble member {j}")));
            }
        }
        Ok(Ensemble { members })
    }

    pub fn size(&self) -> usize {
        self.members.ncols()
    }

    pub fn dim(&self) -> usize {
        self.members.nrows()
    }

    pub fn member(&self, n: usize) -> DVector<f64> {
        self.members.column(n).into_owned()
    }

    pub fn members(&self) -> impl Iterator<Item = DVector<f64>> + '_ {
        self.members.column_iter().map(|c| c.into_owned())
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.members
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.members
    }

    pub fn stats(&self) -> EnsembleStats {
        compute_stats(self)
    }
}

/// Mean, covariance and anomalies of an ensemble.
#[derive(Debug, Clone)]
pub struct EnsembleStats {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
    /// d x N matrix whose column m is `e^(m) = v^(m) - mean`.
    pub anomalies: DMatrix<f64>,
    pub divisor: Divisor,
}

pub fn compute_stats(ensemble: &Ensemble) -> EnsembleStats {
    compute_stats_with(ensemble, Divisor::N)
}

pub fn compute_stats_with(ensemble: &Ensemble, divisor: Divisor) -> EnsembleStats {
    let v = ensemble.as_matrix();
    let (d, n) = v.shape();
    // Fixed left-to-right member order keeps the reduction bitwise reproducible.
    let mut mean = DVector::zeros(d);
    for col in v.column_iter() {
        mean += col;
    }
    mean /= n as f64;
    let mut anomalies = v.clone();
    for mut col in anomalies.column_iter_mut() {
        col -= &mean;
    }
    let mut covariance = &anomalies * anomalies.transpose();
    covariance /= divisor.value(n);
    linalg::symmetrize(&mut covariance);
    EnsembleStats {
        mean,
        covariance,
        anomalies,
        divisor,
    }
}

impl EnsembleStats {
    pub fn size(&self) -> usize {
        self.anomalies.ncols()
    }

    pub fn dim(&self) -> usize {
        self.anomalies.nrows()
    }

    pub fn divisor_value(&self) -> f64 {
        self.divisor.value(self.size())
    }

    /// The anomaly map B as a d x N matrix: `B = E / D`.
    pub fn anomaly_map(&self) -> DMatrix<f64> {
        &self.anomalies / self.divisor_value()
    }

    /// `B b = (1/D) sum_m b_m e^(m)`.
    pub fn anomaly_apply(&self, b: &DVector<f64>) -> Result<DVector<f64>> {
        linalg::check_len("anomaly coefficients", b, self.size())?;
        Ok(&self.anomalies * b / self.divisor_value())
    }

    /// Coefficients `b_m = <e^(m), a>`, so that `anomaly_apply(b) = C a`.
    pub fn covariance_action_coefficients(&self, a: &DVector<f64>) -> Result<DVector<f64>> {
        linalg::check_len("covariance argument", a, self.dim())?;
        if !linalg::all_finite(a) {
            return Err(Error::NonFinite("covariance argument".into()));
        }
        Ok(self.anomalies.tr_mul(a))
    }

    /// Orthonormal eigenbasis of range(C).
    pub fn range_basis(&self) -> RangeBasis {
        linalg::range_basis(&self.covariance)
    }
}
