//! Square-root balanced truncation.

use crate::error::{Error, Result};
use crate::gramians::GramianPair;
use crate::linalg::{rel_frobenius, svd, symmetrize, DenseMatrix, SymFactor};
use crate::models::{LtiSystem, TimeKind};

/// Hankel values below `RANK_TOL * δ_1` are numerically zero.
pub const RANK_TOL: f64 = 1e-14;
/// Relative gap below which `δ_r` and `δ_{r+1}` count as tied.
pub const TIE_TOL: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct BalancedReduction {
    /// `d x r` balancing transformation.
    pub t: DenseMatrix,
    /// `r x d` left inverse of `t`.
    pub t_inv: DenseMatrix,
    /// Retained Hankel values, non-increasing.
    pub hankel: Vec<f64>,
    pub reduced_a: DenseMatrix,
    pub reduced_c: DenseMatrix,
    pub reduced_b: Option<DenseMatrix>,
    /// `T_inv Γ_pr T_inv^T`.
    pub reduced_prior: DenseMatrix,
    pub kind: TimeKind,
    /// True when `δ_r` and `δ_{r+1}` are within [`TIE_TOL`] of each other.
    pub tie: bool,
}

impl BalancedReduction {
    pub fn rank(&self) -> usize {
        self.hankel.len()
    }
}

/// Hankel values: singular values of `L^T R`, trimmed at `1e-14 δ_1`.
pub fn hankel_values(reach: &SymFactor, obs: &SymFactor) -> Result<Vec<f64>> {
    Ok(Balancer::new(reach, obs)?.hankel().to_vec())
}

/// SVD of `L^T R`, computed once and truncated at any rank.
#[derive(Debug, Clone)]
pub struct Balancer {
    reach: DenseMatrix,
    obs: DenseMatrix,
    u: DenseMatrix,
    z: DenseMatrix,
    hankel: Vec<f64>,
}

impl Balancer {
    pub fn new(reach: &SymFactor, obs: &SymFactor) -> Result<Self> {
        if reach.dim() != obs.dim() {
            return Err(Error::Dimension(format!(
                "reachability factor has {} rows, observability factor {}",
                reach.dim(),
                obs.dim()
            )));
        }
        let product = obs.base().transpose() * reach.base();
        let dec = svd(&product)?;
        let top = dec.s.first().copied().unwrap_or(0.0);
        if !(top > 0.0) {
            return Err(Error::Degenerate(
                "L^T R vanishes; no state is both reachable and observable".into(),
            ));
        }
        let usable = dec.s.iter().take_while(|&&s| s > RANK_TOL * top).count();
        let mut u = dec.u.columns(0, usable).into_owned();
        let mut z = dec.v.columns(0, usable).into_owned();
        for j in 0..usable {
            let col = z.column(j);
            let imax = col.iamax();
            if col[imax] < 0.0 {
                z.column_mut(j).neg_mut();
                u.column_mut(j).neg_mut();
            }
        }
        Ok(Self {
            reach: reach.base().clone(),
            obs: obs.base().clone(),
            u,
            z,
            hankel: dec.s[..usable].to_vec(),
        })
    }

    pub fn from_pair(pair: &GramianPair) -> Result<Self> {
        Self::new(&pair.reach, &pair.obs)
    }

    /// Hankel values above the numerical-rank threshold.
    pub fn hankel(&self) -> &[f64] {
        &self.hankel
    }

    pub fn usable_rank(&self) -> usize {
        self.hankel.len()
    }

    /// `(T, T_inv)` for rank `r`.
    pub fn transformation(&self, r: usize) -> Result<(DenseMatrix, DenseMatrix)> {
        let usable = self.usable_rank();
        if r == 0 || r > usable {
            return Err(Error::Rank {
                requested: r,
                usable,
            });
        }
        let mut zr = self.z.columns(0, r).into_owned();
        let mut ur = self.u.columns(0, r).into_owned();
        for j in 0..r {
            let s = self.hankel[j].sqrt().recip();
            zr.column_mut(j).scale_mut(s);
            ur.column_mut(j).scale_mut(s);
        }
        let t = &self.reach * zr;
        let t_inv = ur.transpose() * self.obs.transpose();
        Ok((t, t_inv))
    }

    /// Reduce `system` to rank `r`.
    pub fn reduce(
        &self,
        system: &LtiSystem,
        prior: &SymFactor,
        r: usize,
    ) -> Result<BalancedReduction> {
        let d = system.state_dim();
        if self.reach.nrows() != d || prior.dim() != d {
            return Err(Error::Dimension(format!(
                "Gramian factors and prior must have {d} rows"
            )));
        }
        let (t, t_inv) = self.transformation(r)?;
        let reduced_a = &t_inv * system.a() * &t;
        let reduced_c = system.c() * &t;
        let reduced_b = system.b().map(|b| &t_inv * b);
        let projected = &t_inv * prior.base();
        let reduced_prior = symmetrize(&(&projected * projected.transpose()));
        let tie = r < self.usable_rank()
            && self.hankel[r - 1] - self.hankel[r] < TIE_TOL * self.hankel[r - 1];
        Ok(BalancedReduction {
            t,
            t_inv,
            hankel: self.hankel[..r].to_vec(),
            reduced_a,
            reduced_c,
            reduced_b,
            reduced_prior,
            kind: system.kind(),
            tie,
        })
    }
}

/// Square-root balanced truncation of `system` at rank `r`.
pub fn square_root_bt(
    system: &LtiSystem,
    gramians: &GramianPair,
    prior: &SymFactor,
    r: usize,
) -> Result<BalancedReduction> {
    Balancer::from_pair(gramians)?.reduce(system, prior, r)
}

/// Relative Frobenius distances of `T_inv P T_inv^T` and `T^T Q T` from
/// `diag(δ)`, evaluated through the Gramian factors.
pub fn balance_defect(reduction: &BalancedReduction, gramians: &GramianPair) -> (f64, f64) {
    let target =
        DenseMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(&reduction.hankel));
    let x = &reduction.t_inv * gramians.reach.base();
    let y = reduction.t.transpose() * gramians.obs.base();
    let p = symmetrize(&(&x * x.transpose()));
    let q = symmetrize(&(&y * y.transpose()));
    (rel_frobenius(&p, &target), rel_frobenius(&q, &target))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gramians::{infinite_gramians, Provenance};

    fn diag(v: &[f64]) -> DenseMatrix {
        DenseMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(v))
    }

    #[test]
    fn hankel_examples() {
        let i2 = SymFactor::identity(2);
        assert_eq!(hankel_values(&i2, &i2).unwrap(), vec![1.0, 1.0]);
        let f = SymFactor::new(diag(&[2.0, 1.0])).unwrap();
        let h = hankel_values(&f, &f).unwrap();
        assert!((h[0] - 4.0).abs() < 1e-14 && (h[1] - 1.0).abs() < 1e-14);
        let p = SymFactor::new(diag(&[3.0_f64.sqrt()])).unwrap();
        let q = SymFactor::new(diag(&[5.0_f64.sqrt()])).unwrap();
        assert!((hankel_values(&p, &q).unwrap()[0] - 15.0_f64.sqrt()).abs() < 1e-14);
        let zero = SymFactor::new(DenseMatrix::zeros(2, 1)).unwrap();
        assert!(matches!(
            hankel_values(&zero, &i2),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn scalar_reduction_is_similarity() {
        let sys = LtiSystem::continuous(
            DenseMatrix::from_element(1, 1, -1.0),
            DenseMatrix::from_element(1, 1, 1.0),
        )
        .unwrap();
        let one = DenseMatrix::from_element(1, 1, 1.0);
        let g = infinite_gramians(&sys, &one, &one).unwrap();
        let red = square_root_bt(&sys, &g, &g.reach, 1).unwrap();
        assert!((red.hankel[0] - 0.5).abs() < 1e-14);
        assert!((red.reduced_a[(0, 0)] + 1.0).abs() < 1e-14);
        let (dp, dq) = balance_defect(&red, &g);
        assert!(dp < 1e-14 && dq < 1e-14);
        assert!(matches!(
            square_root_bt(&sys, &g, &g.reach, 2),
            Err(Error::Rank {
                requested: 2,
                usable: 1
            })
        ));
    }

    #[test]
    fn ties_are_flagged() {
        let sys = LtiSystem::continuous(diag(&[-1.0, -2.0]), DenseMatrix::identity(2, 2)).unwrap();
        let pair = GramianPair {
            reach: SymFactor::identity(2),
            obs: SymFactor::identity(2),
            provenance: Provenance::Prior,
            residuals: (None, None),
        };
        let red = square_root_bt(&sys, &pair, &SymFactor::identity(2), 1).unwrap();
        assert!(red.tie);
        let full = square_root_bt(&sys, &pair, &SymFactor::identity(2), 2).unwrap();
        assert!(!full.tie);
    }
}
