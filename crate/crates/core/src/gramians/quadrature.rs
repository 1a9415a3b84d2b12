use crate::error::{Error, Result};
use crate::linalg::{expm, DenseMatrix, SymFactor};

const GL_ORDER: usize = 8;
const INITIAL_PANELS: usize = 2;
pub(crate) const MAX_PANELS: usize = 1 << 14;

/// Gauss–Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p, dp) = legendre(n, x);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, dp) = legendre(n, x);
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

/// `P_n(x)` and `P_n'(x)` by the three-term recurrence.
fn legendre(n: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
        p0 = p1;
        p1 = p2;
    }
    (p1, n as f64 * (x * p1 - p0) / (x * x - 1.0))
}

/// Accumulates columns of a factor and compresses with QR whenever the
/// buffer grows past twice the row count.
pub(crate) struct FactorAccumulator {
    rows: usize,
    acc: DenseMatrix,
}

impl FactorAccumulator {
    pub(crate) fn new(rows: usize) -> Self {
        Self {
            rows,
            acc: DenseMatrix::zeros(rows, 0),
        }
    }

    pub(crate) fn push(&mut self, cols: &DenseMatrix) {
        let k = self.acc.ncols();
        let mut next = std::mem::replace(&mut self.acc, DenseMatrix::zeros(0, 0))
            .resize_horizontally(k + cols.ncols(), 0.0);
        next.columns_mut(k, cols.ncols()).copy_from(cols);
        self.acc = next;
        if self.acc.ncols() > 2 * self.rows.max(1) {
            self.compress();
        }
    }

    fn compress(&mut self) {
        if self.acc.ncols() <= self.rows {
            return;
        }
        let r = self.acc.transpose().qr().r();
        self.acc = r.transpose();
    }

    pub(crate) fn finish(mut self) -> Result<SymFactor> {
        self.compress();
        SymFactor::new(self.acc)
    }
}

/// Factor of `∫_0^{t_e} e^{M τ} W W^T e^{M^T τ} dτ` on `panels` equal GL-8 panels.
pub(crate) fn composite_factor(
    m: &DenseMatrix,
    w: &DenseMatrix,
    t_e: f64,
    panels: usize,
) -> Result<SymFactor> {
    let d = m.nrows();
    let (nodes, weights) = gauss_legendre(GL_ORDER);
    let width = t_e / panels as f64;
    let step = expm(m, width)?;
    let mut node_cols = Vec::with_capacity(GL_ORDER);
    for (x, wt) in nodes.iter().zip(&weights) {
        let offset = 0.5 * (x + 1.0) * width;
        let scale = (0.5 * width * wt).sqrt();
        node_cols.push(expm(m, offset)? * w * scale);
    }
    let mut acc = FactorAccumulator::new(d);
    let block_cols = w.ncols();
    let mut block = DenseMatrix::zeros(d, GL_ORDER * block_cols);
    for j in 0..panels {
        if j > 0 {
            for v in node_cols.iter_mut() {
                *v = &step * &*v;
            }
        }
        for (i, v) in node_cols.iter().enumerate() {
            block.columns_mut(i * block_cols, block_cols).copy_from(v);
        }
        acc.push(&block);
    }
    acc.finish()
}

/// Adaptive composite Gauss–Legendre quadrature: doubles the panel count
/// until successive Gramians agree to `tol` in relative Frobenius norm.
pub(crate) fn adaptive_factor(
    m: &DenseMatrix,
    w: &DenseMatrix,
    t_e: f64,
    tol: f64,
) -> Result<SymFactor> {
    if !(t_e > 0.0 && t_e.is_finite()) {
        return Err(Error::Config(format!(
            "end time must be positive, got {t_e}"
        )));
    }
    if !(tol > 0.0) {
        return Err(Error::Config(format!(
            "quadrature tolerance must be positive, got {tol}"
        )));
    }
    let mut panels = INITIAL_PANELS;
    let mut prev_gram = composite_factor(m, w, t_e, panels)?.gram();
    loop {
        if panels >= MAX_PANELS {
            return Err(Error::NonConvergence(format!(
                "quadrature Gramian did not reach tolerance {tol:e} with {MAX_PANELS} panels"
            )));
        }
        panels *= 2;
        let next = composite_factor(m, w, t_e, panels)?;
        let gram = next.gram();
        let diff = (&gram - &prev_gram).norm();
        if diff <= tol * gram.norm() {
            return Ok(next);
        }
        prev_gram = gram;
    }
}

/// Factor of `Σ_{k=0}^{steps-1} M^k W W^T (M^T)^k`.
pub(crate) fn discrete_sum_factor(
    m: &DenseMatrix,
    w: &DenseMatrix,
    steps: u64,
) -> Result<SymFactor> {
    let mut acc = FactorAccumulator::new(m.nrows());
    let mut v = w.clone();
    for k in 0..steps {
        if k > 0 {
            v = m * v;
        }
        acc.push(&v);
    }
    acc.finish()
}
