//! Dense kernels: matrix exponential, Lyapunov and Stein solvers,
//! PSD factorizations and symmetric-definite eigenproblems.

mod decomp;
mod expm;
mod lyapunov;

pub use decomp::{cholesky_psd, svd, sym_eigen, sym_generalized_eig, Svd};
pub use expm::expm;
pub use lyapunov::{eigenvalues, solve_continuous_lyapunov, solve_discrete_lyapunov};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Dense real matrix used throughout the crate.
pub type DenseMatrix = DMatrix<f64>;

/// Default clipping tolerance for [`cholesky_psd`].
pub const DEFAULT_CLIP_TOL: f64 = 1e-12;

/// Symmetric positive semidefinite matrix stored as `base * base^T`.
#[derive(Debug, Clone, PartialEq)]
pub struct SymFactor {
    base: DenseMatrix,
}

impl SymFactor {
    /// Wrap an `n x k` factor with `k <= n`.
    pub fn new(base: DenseMatrix) -> Result<Self> {
        if base.ncols() > base.nrows() {
            return Err(Error::Dimension(format!(
                "factor has {} columns but only {} rows",
                base.ncols(),
                base.nrows()
            )));
        }
        ensure_finite(&base, "factor")?;
        Ok(Self { base })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            base: DenseMatrix::identity(n, n),
        }
    }

    pub fn base(&self) -> &DenseMatrix {
        &self.base
    }

    pub fn into_base(self) -> DenseMatrix {
        self.base
    }

    /// Dimension `n` of the represented matrix.
    pub fn dim(&self) -> usize {
        self.base.nrows()
    }

    /// Number of factor columns.
    pub fn rank(&self) -> usize {
        self.base.ncols()
    }

    /// The represented matrix `base * base^T`.
    pub fn gram(&self) -> DenseMatrix {
        symmetrize(&(&self.base * self.base.transpose()))
    }

    /// True if the factor is square, i.e. can represent a definite matrix.
    pub fn is_square(&self) -> bool {
        self.base.nrows() == self.base.ncols()
    }
}

/// Eigenvalues sorted non-increasing, with eigenvectors as matching columns.
#[derive(Debug, Clone)]
pub struct EigenPairs {
    pub values: Vec<f64>,
    pub vectors: DenseMatrix,
}

pub fn ensure_finite(m: &DenseMatrix, what: &'static str) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}

pub fn ensure_square(m: &DenseMatrix, what: &str) -> Result<()> {
    if m.is_square() {
        Ok(())
    } else {
        Err(Error::Dimension(format!(
            "{what} must be square, got {}x{}",
            m.nrows(),
            m.ncols()
        )))
    }
}

/// `(M + M^T) / 2`.
pub fn symmetrize(m: &DenseMatrix) -> DenseMatrix {
    (m + m.transpose()) * 0.5
}

/// Relative Frobenius distance `||a - b||_F / ||b||_F` (absolute when `b = 0`).
pub fn rel_frobenius(a: &DenseMatrix, b: &DenseMatrix) -> f64 {
    let diff = (a - b).norm();
    let scale = b.norm();
    if scale > 0.0 {
        diff / scale
    } else {
        diff
    }
}

/// Relative 2-norm distance between vectors.
pub fn rel_norm(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    let diff = (a - b).norm();
    let scale = b.norm();
    if scale > 0.0 {
        diff / scale
    } else {
        diff
    }
}

/// Flip column signs so that the largest-magnitude entry of each column is positive.
pub(crate) fn fix_column_signs(v: &mut DenseMatrix) {
    for mut col in v.column_iter_mut() {
        let mut best = 0.0_f64;
        let mut sign = 1.0;
        for x in col.iter() {
            if x.abs() > best {
                best = x.abs();
                sign = x.signum();
            }
        }
        if sign < 0.0 {
            col.neg_mut();
        }
    }
}
