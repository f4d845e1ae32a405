//! Small dense linear-algebra helpers shared by the filters and the QP solver.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::error::{Error, Result};

/// Relative eigenvalue threshold below which a covariance direction counts as null.
pub const RANK_TOL: f64 = 1e-12;

pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let s = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = s;
            m[(j, i)] = s;
        }
    }
}

pub fn all_finite(v: &DVector<f64>) -> bool {
    v.iter().all(|x| x.is_finite())
}

pub fn check_len(what: &'static str, v: &DVector<f64>, expected: usize) -> Result<()> {
    if v.len() != expected {
        return Err(Error::DimensionMismatch {
            what,
            expected,
            found: v.len(),
        });
    }
    Ok(())
}

pub fn check_square(what: &'static str, m: &DMatrix<f64>, expected: usize) -> Result<()> {
    if m.nrows() != expected {
        return Err(Error::DimensionMismatch {
            what,
            expected,
            found: m.nrows(),
        });
    }
    if m.ncols() != expected {
        return Err(Error::DimensionMismatch {
            what,
            expected,
            found: m.ncols(),
        });
    }
    Ok(())
}

pub fn cholesky(what: &str, m: &DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    Cholesky::new(m.clone())
        .ok_or_else(|| Error::Numerical(format!("{what} is not positive definite")))
}

/// Orthonormal basis of the numerical range of a symmetric PSD matrix.
#[derive(Debug, Clone)]
pub struct RangeBasis {
    /// d x r matrix whose columns are eigenvectors with non-negligible eigenvalues.
    pub vectors: DMatrix<f64>,
    /// The r retained eigenvalues, in the same column order.
    pub values: DVector<f64>,
}

impl RangeBasis {
    pub fn rank(&self) -> usize {
        self.values.len()
    }

    /// Residual of projecting `x` onto the spanned subspace.
    pub fn projection_residual(&self, x: &DVector<f64>) -> f64 {
        let coeffs = self.vectors.tr_mul(x);
        (x - &self.vectors * coeffs).norm()
    }
}

/// Eigenvalues below `RANK_TOL * lambda_max` are treated as zero.
pub fn range_basis(sym: &DMatrix<f64>) -> RangeBasis {
    let eig = SymmetricEigen::new(sym.clone());
    let lmax = eig.eigenvalues.iter().cloned().fold(0.0_f64, f64::max);
    let keep: Vec<usize> = if lmax > 0.0 {
        (0..eig.eigenvalues.len())
            .filter(|&i| eig.eigenvalues[i] > RANK_TOL * lmax)
            .collect()
    } else {
        Vec::new()
    };
    let d = sym.nrows();
    let mut vectors = DMatrix::zeros(d, keep.len());
    let mut values = DVector::zeros(keep.len());
    for (c, &i) in keep.iter().enumerate() {
        vectors.set_column(c, &eig.eigenvectors.column(i));
        values[c] = eig.eigenvalues[i];
    }
    RangeBasis { vectors, values }
}

/// Residual of projecting `x` onto the column span of `a` (any rank).
pub fn span_residual(a: &DMatrix<f64>, x: &DVector<f64>) -> f64 {
    let gram = a.tr_mul(a);
    let basis = range_basis(&gram);
    // Columns of a * V / sqrt(lambda) are orthonormal and span col(a).
    let mut q = a * &basis.vectors;
    for (c, lam) in basis.values.iter().enumerate() {
        let s = lam.sqrt();
        q.column_mut(c).unscale_mut(s);
    }
    let coeffs = q.tr_mul(x);
    (x - q * coeffs).norm()
}

/// Square-root factor `L` with `L L^T = cov` for a symmetric PSD matrix.
///
/// Cholesky is used when it succeeds; singular covariances fall back to the
/// eigen square root with round-off negative eigenvalues clamped to zero.
pub fn psd_sqrt(what: &str, cov: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if let Some(ch) = Cholesky::new(cov.clone()) {
        return Ok(ch.l());
    }
    let eig = SymmetricEigen::new(cov.clone());
    let lmax = eig.eigenvalues.iter().cloned().fold(0.0_f64, |a, b| a.max(b.abs()));
    let mut l = eig.eigenvectors.clone();
    for (c, &lam) in eig.eigenvalues.iter().enumerate() {
        if lam < -1e-10 * lmax.max(f64::MIN_POSITIVE) {
            return Err(Error::InvalidInput(format!(
                "{what} is not positive semidefinite (eigenvalue {lam:e})"
            )));
        }
        l.column_mut(c).scale_mut(lam.max(0.0).sqrt());
    }
    Ok(l)
}
