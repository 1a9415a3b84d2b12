use nalgebra::{Complex, DMatrix, Schur};

use crate::error::{Error, Result};

use super::{ensure_finite, ensure_square, symmetrize, DenseMatrix};

const SPECTRUM_TOL: f64 = 1e-10;
const RESIDUAL_TOL: f64 = 1e-10;
const SYMMETRY_TOL: f64 = 1e-10;

/// Solve `A X + X A^T + W = 0` by Bartels–Stewart on the real Schur form of `A`.
///
/// Stability is not required, only `λ_i + λ_j != 0` for every eigenvalue pair.
pub fn solve_continuous_lyapunov(a: &DenseMatrix, w: &DenseMatrix) -> Result<DenseMatrix> {
    check_inputs(a, w)?;
    let schur = RealSchur::new(a)?;
    schur.check_pairs(|x, y| (x + y).norm() <= SPECTRUM_TOL)?;

    let c = -(schur.q.transpose() * w * &schur.q);
    let y = schur.solve_sylvester_continuous(c)?;
    let x = symmetrize(&(&schur.q * y * schur.q.transpose()));

    let residual = (a * &x + &x * a.transpose() + w).norm();
    certify("continuous Lyapunov", residual, w.norm().max(x.norm()))?;
    Ok(x)
}

/// Solve the Stein equation `X = A X A^T + W`.
///
/// Requires `λ_i λ_j != 1` for every eigenvalue pair.
pub fn solve_discrete_lyapunov(a: &DenseMatrix, w: &DenseMatrix) -> Result<DenseMatrix> {
    check_inputs(a, w)?;
    let schur = RealSchur::new(a)?;
    schur.check_pairs(|x, y| (x * y - Complex::new(1.0, 0.0)).norm() <= SPECTRUM_TOL)?;

    let c = schur.q.transpose() * w * &schur.q;
    let y = schur.solve_stein(c)?;
    let x = symmetrize(&(&schur.q * y * schur.q.transpose()));

    let residual = (a * &x * a.transpose() + w - &x).norm();
    certify("discrete Lyapunov", residual, w.norm().max(x.norm()))?;
    Ok(x)
}

/// Eigenvalues of a real square matrix, read off its real Schur form.
pub fn eigenvalues(a: &DenseMatrix) -> Result<Vec<Complex<f64>>> {
    ensure_square(a, "A")?;
    ensure_finite(a, "A")?;
    Ok(RealSchur::new(a)?.eigenvalues())
}

fn check_inputs(a: &DenseMatrix, w: &DenseMatrix) -> Result<()> {
    ensure_square(a, "A")?;
    ensure_square(w, "W")?;
    if a.nrows() != w.nrows() {
        return Err(Error::Dimension(format!(
            "A is {0}x{0} but W is {1}x{1}",
            a.nrows(),
            w.nrows()
        )));
    }
    ensure_finite(a, "A")?;
    ensure_finite(w, "W")?;
    let asym = (w - w.transpose()).norm();
    if asym > SYMMETRY_TOL * w.norm() {
        return Err(Error::Dimension(format!(
            "W is not symmetric (asymmetry {asym:e})"
        )));
    }
    Ok(())
}

fn certify(what: &'static str, residual: f64, scale: f64) -> Result<()> {
    let bound = RESIDUAL_TOL * scale;
    if residual <= bound || scale == 0.0 && residual == 0.0 {
        Ok(())
    } else {
        Err(Error::Residual {
            what,
            residual: residual / scale.max(f64::MIN_POSITIVE),
            bound: RESIDUAL_TOL,
        })
    }
}

/// `A = Q T Q^T` with `T` quasi upper triangular, plus its diagonal block layout.
struct RealSchur {
    q: DenseMatrix,
    t: DenseMatrix,
    blocks: Vec<(usize, usize)>,
}

impl RealSchur {
    fn new(a: &DenseMatrix) -> Result<Self> {
        let n = a.nrows();
        let max_iter = 100 * n.max(10);
        let schur = Schur::try_new(a.clone(), f64::EPSILON, max_iter).ok_or_else(|| {
            Error::NonConvergence("real Schur decomposition did not converge".into())
        })?;
        let (q, mut t) = schur.unpack();
        for j in 0..n {
            for i in (j + 2)..n {
                t[(i, j)] = 0.0;
            }
        }
        let mut blocks = Vec::new();
        let mut i = 0;
        while i < n {
            if i + 1 < n && t[(i + 1, i)] != 0.0 {
                blocks.push((i, 2));
                i += 2;
            } else {
                if i + 1 < n {
                    t[(i + 1, i)] = 0.0;
                }
                blocks.push((i, 1));
                i += 1;
            }
        }
        Ok(Self { q, t, blocks })
    }

    fn eigenvalues(&self) -> Vec<Complex<f64>> {
        let mut out = Vec::with_capacity(self.t.nrows());
        for &(s, size) in &self.blocks {
            if size == 1 {
                out.push(Complex::new(self.t[(s, s)], 0.0));
            } else {
                let (a, b) = (self.t[(s, s)], self.t[(s, s + 1)]);
                let (c, d) = (self.t[(s + 1, s)], self.t[(s + 1, s + 1)]);
                let mean = 0.5 * (a + d);
                let disc = 0.25 * (a - d) * (a - d) + b * c;
                if disc >= 0.0 {
                    out.push(Complex::new(mean + disc.sqrt(), 0.0));
                    out.push(Complex::new(mean - disc.sqrt(), 0.0));
                } else {
                    out.push(Complex::new(mean, (-disc).sqrt()));
                    out.push(Complex::new(mean, -(-disc).sqrt()));
                }
            }
        }
        out
    }

    fn check_pairs(&self, bad: impl Fn(Complex<f64>, Complex<f64>) -> bool) -> Result<()> {
        let eig = self.eigenvalues();
        for (i, &x) in eig.iter().enumerate() {
            for &y in &eig[i..] {
                if bad(x, y) {
                    return Err(Error::SingularPencil(fmt_complex(x), fmt_complex(y)));
                }
            }
        }
        Ok(())
    }

    /// Solve `T Y + Y T^T = C`.
    fn solve_sylvester_continuous(&self, mut c: DenseMatrix) -> Result<DenseMatrix> {
        let n = self.t.nrows();
        let t = &self.t;
        let mut y = DenseMatrix::zeros(n, n);
        for &(js, jn) in self.blocks.iter().rev() {
            let tjj = t.view((js, js), (jn, jn)).into_owned();
            let mut rhs = c.columns(js, jn).into_owned();
            // Row blocks bottom-up: T_ii y_i + y_i T_jj^T = rhs_i - sum_{l>i} T_il y_l.
            for &(is, inn) in self.blocks.iter().rev() {
                let tii = t.view((is, is), (inn, inn)).into_owned();
                let b = rhs.rows(is, inn).into_owned();
                let yi = solve_small(&tii, &tjj, &b, SmallKind::Sylvester)?;
                if is > 0 {
                    let upd = t.view((0, is), (is, inn)) * &yi;
                    let mut top = rhs.rows_mut(0, is);
                    top -= upd;
                }
                y.view_mut((is, js), (inn, jn)).copy_from(&yi);
            }
            if js > 0 {
                let yj = y.columns(js, jn);
                let upd = yj * t.view((0, js), (js, jn)).transpose();
                let mut left = c.columns_mut(0, js);
                left -= upd;
            }
        }
        Ok(y)
    }

    /// Solve `Y - T Y T^T = C`.
    fn solve_stein(&self, c: DenseMatrix) -> Result<DenseMatrix> {
        let n = self.t.nrows();
        let t = &self.t;
        let mut y = DenseMatrix::zeros(n, n);
        // z[:, j] accumulates sum_{k>j} Y_k T_jk^T.
        let mut z = DenseMatrix::zeros(n, n);
        for &(js, jn) in self.blocks.iter().rev() {
            let tjj = t.view((js, js), (jn, jn)).into_owned();
            let rhs = c.columns(js, jn) + t * z.columns(js, jn);
            // Row blocks bottom-up: y_i - T_ii y_i T_jj^T = rhs_i + (sum_{l>i} T_il y_l) T_jj^T.
            let mut acc = DenseMatrix::zeros(n, jn);
            for &(is, inn) in self.blocks.iter().rev() {
                let tii = t.view((is, is), (inn, inn)).into_owned();
                let b = rhs.rows(is, inn) + acc.rows(is, inn) * tjj.transpose();
                let yi = solve_small(&tii, &tjj, &b, SmallKind::Stein)?;
                if is > 0 {
                    let upd = t.view((0, is), (is, inn)) * &yi;
                    let mut top = acc.rows_mut(0, is);
                    top += upd;
                }
                y.view_mut((is, js), (inn, jn)).copy_from(&yi);
            }
            if js > 0 {
                let yj = y.columns(js, jn);
                let upd = yj * t.view((0, js), (js, jn)).transpose();
                let mut left = z.columns_mut(0, js);
                left += upd;
            }
        }
        Ok(y)
    }
}

#[derive(Clone, Copy)]
enum SmallKind {
    /// `P y + y Q^T = b`
    Sylvester,
    /// `y - P y Q^T = b`
    Stein,
}

/// Solve a block equation of size at most 2x2 through its Kronecker form.
fn solve_small(
    p: &DenseMatrix,
    q: &DenseMatrix,
    b: &DenseMatrix,
    kind: SmallKind,
) -> Result<DenseMatrix> {
    let (pn, qn) = (p.nrows(), q.nrows());
    if pn == 1 && qn == 1 {
        let denom = match kind {
            SmallKind::Sylvester => p[(0, 0)] + q[(0, 0)],
            SmallKind::Stein => 1.0 - p[(0, 0)] * q[(0, 0)],
        };
        if denom == 0.0 {
            return Err(Error::Degenerate("singular Schur block equation".into()));
        }
        return Ok(DenseMatrix::from_element(1, 1, b[(0, 0)] / denom));
    }
    let m = pn * qn;
    let mut k = DenseMatrix::zeros(m, m);
    // Column-major vec: vec(P Y) = (I ⊗ P) vec Y, vec(Y Q^T) = (Q ⊗ I) vec Y.
    for qi in 0..qn {
        for qj in 0..qn {
            for pi in 0..pn {
                for pj in 0..pn {
                    let row = qi * pn + pi;
                    let col = qj * pn + pj;
                    let id_q = if qi == qj { 1.0 } else { 0.0 };
                    let id_p = if pi == pj { 1.0 } else { 0.0 };
                    k[(row, col)] = match kind {
                        SmallKind::Sylvester => id_q * p[(pi, pj)] + q[(qi, qj)] * id_p,
                        SmallKind::Stein => id_q * id_p - q[(qi, qj)] * p[(pi, pj)],
                    };
                }
            }
        }
    }
    let rhs = nalgebra::DVector::from_iterator(m, b.iter().copied());
    let sol = k
        .full_piv_lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Degenerate("singular Schur block equation".into()))?;
    Ok(DMatrix::from_column_slice(pn, qn, sol.as_slice()))
}

fn fmt_complex(z: Complex<f64>) -> String {
    if z.im == 0.0 {
        format!("{:e}", z.re)
    } else {
        format!("{:e}{:+e}i", z.re, z.im)
    }
}
