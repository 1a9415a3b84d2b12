use faer::{Mat, MatRef, Side};

use crate::error::{Error, Result};

use super::{
    ensure_finite, ensure_square, fix_column_signs, symmetrize, DenseMatrix, EigenPairs, SymFactor,
};

const ASYMMETRY_TOL: f64 = 1e-12;

/// Symmetric eigendecomposition with values sorted non-increasing and
/// eigenvector signs fixed (largest-magnitude entry positive).
pub fn sym_eigen(m: &DenseMatrix) -> Result<EigenPairs> {
    ensure_square(m, "M")?;
    ensure_finite(m, "M")?;
    let n = m.nrows();
    if n == 0 {
        return Ok(EigenPairs {
            values: Vec::new(),
            vectors: DenseMatrix::zeros(0, 0),
        });
    }
    let sym = symmetrize(m);
    let eig = to_faer(&sym)
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| Error::NonConvergence(format!("symmetric eigensolver: {e:?}")))?;
    let raw = eig.S().column_vector();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| raw[j].total_cmp(&raw[i]));
    let values = order.iter().map(|&i| raw[i]).collect();
    let u = eig.U();
    let mut vectors = DenseMatrix::from_fn(n, n, |i, j| u[(i, order[j])]);
    fix_column_signs(&mut vectors);
    Ok(EigenPairs { values, vectors })
}

/// Factor a symmetric positive semidefinite matrix as `F F^T`.
///
/// Eigenvalues in `[-clip_tol * ||M||_2, 0]` are treated as zero and their
/// directions dropped; anything more negative is an error.
pub fn cholesky_psd(m: &DenseMatrix, clip_tol: f64) -> Result<SymFactor> {
    ensure_square(m, "M")?;
    ensure_finite(m, "M")?;
    let scale = m.norm();
    let asym = (m - m.transpose()).norm();
    if asym > ASYMMETRY_TOL * scale {
        return Err(Error::Definiteness(format!(
            "matrix is not symmetric (relative asymmetry {:e})",
            asym / scale
        )));
    }
    let eig = sym_eigen(m)?;
    let norm2 = eig.values.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()));
    if let Some(&lowest) = eig.values.last() {
        if lowest < -clip_tol * norm2 {
            return Err(Error::NotPsd(lowest));
        }
    }
    let keep: Vec<usize> = (0..eig.values.len())
        .filter(|&i| eig.values[i] > 0.0)
        .collect();
    let mut base = eig.vectors.select_columns(&keep);
    for (col, &i) in keep.iter().enumerate() {
        base.column_mut(col).scale_mut(eig.values[i].sqrt());
    }
    SymFactor::new(base)
}

/// Generalized symmetric-definite eigenproblem `M v = λ N v` with `N = F F^T`.
///
/// Vectors are `N`-orthonormal and values sorted non-increasing.
pub fn sym_generalized_eig(m: &DenseMatrix, n_factor: &SymFactor) -> Result<EigenPairs> {
    ensure_square(m, "M")?;
    let n = m.nrows();
    if n_factor.dim() != n {
        return Err(Error::Dimension(format!(
            "M is {n}x{n} but the pencil factor has {} rows",
            n_factor.dim()
        )));
    }
    let f = n_factor.base();
    if !n_factor.is_square() {
        return Err(Error::Definiteness(format!(
            "pencil factor has rank {} < {n}",
            n_factor.rank()
        )));
    }
    let lu = f.clone().lu();
    let lu_t = f.transpose().lu();
    check_pivots(&lu.u())?;

    // Whitened matrix F^{-1} M F^{-T}.
    let left = lu
        .solve(m)
        .ok_or_else(|| Error::Definiteness("singular pencil factor".into()))?;
    let whitened = lu
        .solve(&left.transpose())
        .ok_or_else(|| Error::Definiteness("singular pencil factor".into()))?;
    let eig = sym_eigen(&whitened)?;
    let vectors = lu_t
        .solve(&eig.vectors)
        .ok_or_else(|| Error::Definiteness("singular pencil factor".into()))?;
    Ok(EigenPairs {
        values: eig.values,
        vectors,
    })
}

fn check_pivots(u: &DenseMatrix) -> Result<()> {
    let diag: Vec<f64> = u.diagonal().iter().map(|x| x.abs()).collect();
    let max = diag.iter().copied().fold(0.0, f64::max);
    let min = diag.iter().copied().fold(f64::INFINITY, f64::min);
    if diag.is_empty() || min > 1e-14 * max {
        Ok(())
    } else {
        Err(Error::Definiteness(format!(
            "pencil factor is numerically rank deficient (pivot ratio {:e})",
            min / max
        )))
    }
}

/// Thin singular value decomposition `M = U diag(S) V^T`, `S` non-increasing.
#[derive(Debug, Clone)]
pub struct Svd {
    pub u: DenseMatrix,
    pub s: Vec<f64>,
    pub v: DenseMatrix,
}

pub fn svd(m: &DenseMatrix) -> Result<Svd> {
    ensure_finite(m, "M")?;
    let k = m.nrows().min(m.ncols());
    if k == 0 {
        return Ok(Svd {
            u: DenseMatrix::zeros(m.nrows(), 0),
            s: Vec::new(),
            v: DenseMatrix::zeros(m.ncols(), 0),
        });
    }
    let dec = to_faer(m)
        .thin_svd()
        .map_err(|e| Error::NonConvergence(format!("singular value decomposition: {e:?}")))?;
    let raw = dec.S().column_vector();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&i, &j| raw[j].total_cmp(&raw[i]));
    let (fu, fv) = (dec.U(), dec.V());
    Ok(Svd {
        u: DenseMatrix::from_fn(m.nrows(), k, |i, j| fu[(i, order[j])]),
        s: order.iter().map(|&i| raw[i].max(0.0)).collect(),
        v: DenseMatrix::from_fn(m.ncols(), k, |i, j| fv[(i, order[j])]),
    })
}

fn to_faer(m: &DenseMatrix) -> Mat<f64> {
    // Both libraries store column-major.
    MatRef::from_column_major_slice(m.as_slice(), m.nrows(), m.ncols()).to_owned()
}
