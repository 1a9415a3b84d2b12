//! Reachability and observability Gramians: infinite, time-limited,
//! noise-weighted, discrete, Fisher and prior-based.

mod quadrature;

pub use quadrature::gauss_legendre;

use nalgebra::Cholesky;

use crate::error::{Error, Result};
use crate::linalg::{
    cholesky_psd, solve_continuous_lyapunov, solve_discrete_lyapunov, sym_eigen, DenseMatrix,
    SymFactor, DEFAULT_CLIP_TOL,
};
use crate::models::{integer_steps, matrix_power, InferenceSetup, LtiSystem, TimeKind};

/// Tolerance used when the Lyapunov route falls back to quadrature.
pub const FALLBACK_QUADRATURE_TOL: f64 = 1e-10;

/// Relative tolerance for [`compatibility_check`].
pub const COMPATIBILITY_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Provenance {
    Infinite,
    TimeLimited(f64),
    Fisher,
    Prior,
}

/// How time-limited Gramians are computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GramianRoute {
    /// Modified Lyapunov equation, falling back to quadrature when the
    /// spectrum condition fails or the solution cannot be certified.
    #[default]
    Auto,
    Lyapunov,
    Quadrature,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Reach,
    Obs,
}

/// `P = R R^T` and `Q = L L^T`.
#[derive(Debug, Clone)]
pub struct GramianPair {
    pub reach: SymFactor,
    pub obs: SymFactor,
    pub provenance: Provenance,
    /// Relative solver residuals `(reach, obs)` where a matrix equation was solved.
    pub residuals: (Option<f64>, Option<f64>),
}

/// A Gramian factor with the residual of the equation it came from, if any.
#[derive(Debug, Clone)]
struct Solved {
    factor: SymFactor,
    residual: Option<f64>,
}

/// `L_ε^{-1} C`, so that `C^T Γ_ε^{-1} C = (L_ε^{-1} C)^T (L_ε^{-1} C)`.
pub fn whitened_output(c: &DenseMatrix, noise_cov: &DenseMatrix) -> Result<DenseMatrix> {
    if noise_cov.nrows() != c.nrows() || !noise_cov.is_square() {
        return Err(Error::Dimension(format!(
            "noise covariance must be {0}x{0}, got {1}x{2}",
            c.nrows(),
            noise_cov.nrows(),
            noise_cov.ncols()
        )));
    }
    let chol = Cholesky::new(noise_cov.clone())
        .ok_or_else(|| Error::Definiteness("noise covariance is not positive definite".into()))?;
    let mut w = c.clone();
    chol.l_dirty().solve_lower_triangular_mut(&mut w);
    Ok(w)
}

fn check_rows(system: &LtiSystem, b: &DenseMatrix) -> Result<()> {
    if b.nrows() != system.state_dim() {
        return Err(Error::Dimension(format!(
            "B has {} rows but the state dimension is {}",
            b.nrows(),
            system.state_dim()
        )));
    }
    Ok(())
}

/// Solve the Lyapunov (continuous) or Stein (discrete) equation with
/// dynamics `m` and right-hand side `w`, then factor.
fn lyapunov_factor(m: &DenseMatrix, w: &DenseMatrix, kind: TimeKind) -> Result<Solved> {
    let (x, residual) = match kind {
        TimeKind::Continuous => {
            let x = solve_continuous_lyapunov(m, w)?;
            let r = (m * &x + &x * m.transpose() + w).norm();
            (x, r)
        }
        TimeKind::Discrete => {
            let x = solve_discrete_lyapunov(m, w)?;
            let r = (m * &x * m.transpose() + w - &x).norm();
            (x, r)
        }
    };
    let scale = w.norm().max(x.norm());
    let factor = cholesky_psd(&x, DEFAULT_CLIP_TOL)?;
    Ok(Solved {
        factor,
        residual: Some(if scale > 0.0 {
            residual / scale
        } else {
            residual
        }),
    })
}

/// Infinite reachability Gramian `P_∞` for input matrix `b`.
pub fn infinite_reachability(system: &LtiSystem, b: &DenseMatrix) -> Result<SymFactor> {
    check_rows(system, b)?;
    system.check_stable()?;
    Ok(lyapunov_factor(system.a(), &(b * b.transpose()), system.kind())?.factor)
}

/// Infinite observability Gramian weighted by the noise precision.
pub fn infinite_noisy_observability(
    system: &LtiSystem,
    noise_cov: &DenseMatrix,
) -> Result<SymFactor> {
    Ok(infinite_obs(system, noise_cov)?.factor)
}

fn infinite_obs(system: &LtiSystem, noise_cov: &DenseMatrix) -> Result<Solved> {
    system.check_stable()?;
    let cw = whitened_output(system.c(), noise_cov)?;
    lyapunov_factor(
        &system.a().transpose(),
        &(cw.transpose() * cw),
        system.kind(),
    )
}

/// Infinite Gramians `(P_∞, Q_∞)`; errors for unstable systems.
pub fn infinite_gramians(
    system: &LtiSystem,
    b: &DenseMatrix,
    noise_cov: &DenseMatrix,
) -> Result<GramianPair> {
    check_rows(system, b)?;
    system.check_stable()?;
    let p = lyapunov_factor(system.a(), &(b * b.transpose()), system.kind())?;
    let q = infinite_obs(system, noise_cov)?;
    Ok(GramianPair {
        reach: p.factor,
        obs: q.factor,
        provenance: Provenance::Infinite,
        residuals: (p.residual, q.residual),
    })
}

/// Factor of the time-limited Gramian `∫_0^{t_e} e^{Mτ} W W^T e^{M^T τ} dτ`
/// (continuous) or `Σ_{k<t_e} M^k W W^T (M^T)^k` (discrete).
fn time_limited(
    m: &DenseMatrix,
    w: &DenseMatrix,
    kind: TimeKind,
    t_e: f64,
    route: GramianRoute,
) -> Result<Solved> {
    match kind {
        TimeKind::Continuous if !(t_e > 0.0 && t_e.is_finite()) => {
            return Err(Error::Config(format!(
                "end time must be positive, got {t_e}"
            )));
        }
        TimeKind::Discrete => {
            integer_steps(t_e)?;
        }
        _ => {}
    }
    match route {
        GramianRoute::Lyapunov => modified_lyapunov(m, w, kind, t_e),
        GramianRoute::Quadrature => Ok(Solved {
            factor: quadrature_factor(m, w, kind, t_e, FALLBACK_QUADRATURE_TOL)?,
            residual: None,
        }),
        GramianRoute::Auto => match modified_lyapunov(m, w, kind, t_e) {
            Err(Error::SingularPencil(..) | Error::Residual { .. } | Error::NotPsd(_)) => {
                Ok(Solved {
                    factor: quadrature_factor(m, w, kind, t_e, FALLBACK_QUADRATURE_TOL)?,
                    residual: None,
                })
            }
            other => other,
        },
    }
}

fn modified_lyapunov(m: &DenseMatrix, w: &DenseMatrix, kind: TimeKind, t_e: f64) -> Result<Solved> {
    let end = match kind {
        TimeKind::Continuous => crate::linalg::expm(m, t_e)?,
        TimeKind::Discrete => matrix_power(m, integer_steps(t_e)?),
    };
    let w_end = &end * w;
    let rhs = w * w.transpose() - &w_end * w_end.transpose();
    lyapunov_factor(m, &rhs, kind)
}

fn quadrature_factor(
    m: &DenseMatrix,
    w: &DenseMatrix,
    kind: TimeKind,
    t_e: f64,
    tol: f64,
) -> Result<SymFactor> {
    match kind {
        TimeKind::Continuous => quadrature::adaptive_factor(m, w, t_e, tol),
        TimeKind::Discrete => quadrature::discrete_sum_factor(m, w, integer_steps(t_e)?),
    }
}

/// Time-limited reachability Gramian `P(t_e)`.
pub fn tl_reachability(system: &LtiSystem, b: &DenseMatrix, t_e: f64) -> Result<SymFactor> {
    tl_reachability_with(system, b, t_e, GramianRoute::Auto)
}

pub fn tl_reachability_with(
    system: &LtiSystem,
    b: &DenseMatrix,
    t_e: f64,
    route: GramianRoute,
) -> Result<SymFactor> {
    check_rows(system, b)?;
    Ok(time_limited(system.a(), b, system.kind(), t_e, route)?.factor)
}

/// Time-limited observability Gramian weighted by the noise precision.
pub fn tl_noisy_observability(
    system: &LtiSystem,
    noise_cov: &DenseMatrix,
    t_e: f64,
) -> Result<SymFactor> {
    tl_noisy_observability_with(system, noise_cov, t_e, GramianRoute::Auto)
}

pub fn tl_noisy_observability_with(
    system: &LtiSystem,
    noise_cov: &DenseMatrix,
    t_e: f64,
    route: GramianRoute,
) -> Result<SymFactor> {
    Ok(tl_obs(system, noise_cov, t_e, route)?.factor)
}

fn tl_obs(
    system: &LtiSystem,
    noise_cov: &DenseMatrix,
    t_e: f64,
    route: GramianRoute,
) -> Result<Solved> {
    let cw = whitened_output(system.c(), noise_cov)?;
    time_limited(
        &system.a().transpose(),
        &cw.transpose(),
        system.kind(),
        t_e,
        route,
    )
}

/// Adaptive Gauss–Legendre quadrature of a time-limited Gramian.
///
/// For `Side::Reach`, `weight` is `B` (d x m) and the integrand is
/// `e^{Aτ} B B^T e^{A^T τ}`; for `Side::Obs`, `weight` is a `p x d` output
/// map `W` and the integrand is `e^{A^T τ} W^T W e^{Aτ}`. Discrete systems
/// are summed exactly.
pub fn quadrature_gramian(
    system: &LtiSystem,
    weight: &DenseMatrix,
    side: Side,
    t_e: f64,
    tol: f64,
) -> Result<SymFactor> {
    let d = system.state_dim();
    match side {
        Side::Reach => {
            check_rows(system, weight)?;
            quadrature_factor(system.a(), weight, system.kind(), t_e, tol)
        }
        Side::Obs => {
            if weight.ncols() != d {
                return Err(Error::Dimension(format!(
                    "output weight has {} columns, expected {d}",
                    weight.ncols()
                )));
            }
            quadrature_factor(
                &system.a().transpose(),
                &weight.transpose(),
                system.kind(),
                t_e,
                tol,
            )
        }
    }
}

/// Gramians for time-limited balancing of the inference problem: the prior
/// as reachability Gramian and the noisy observability Gramian on `[0, t_e]`.
pub fn lg_gramians(setup: &InferenceSetup, route: GramianRoute) -> Result<GramianPair> {
    let t_e = setup.end_time();
    let q = tl_obs(setup.system(), setup.noise_cov(), t_e, route)?;
    Ok(GramianPair {
        reach: setup.prior().clone(),
        obs: q.factor,
        provenance: Provenance::TimeLimited(t_e),
        residuals: (None, q.residual),
    })
}

/// Gramians for classical balancing of the inference problem: the prior and
/// the infinite noisy observability Gramian. Requires a stable system.
pub fn bt_gramians(setup: &InferenceSetup) -> Result<GramianPair> {
    let q = infinite_obs(setup.system(), setup.noise_cov())?;
    Ok(GramianPair {
        reach: setup.prior().clone(),
        obs: q.factor,
        provenance: Provenance::Infinite,
        residuals: (None, q.residual),
    })
}

/// Fisher information `H = Σ_k e^{A^T t_k} C^T Γ_ε^{-1} C e^{A t_k}`.
pub fn fisher_matrix(setup: &InferenceSetup) -> Result<DenseMatrix> {
    let f = crate::inference::forward_map(setup)?.whitened(setup);
    Ok(f.transpose() * f)
}

/// Factor `L` with `L L^T = H`, taken from a QR factorization of the
/// whitened stacked forward map.
pub fn fisher_factor(setup: &InferenceSetup) -> Result<SymFactor> {
    let f = crate::inference::forward_map(setup)?.whitened(setup);
    let d = setup.state_dim();
    if f.nrows() < d {
        return SymFactor::new(f.transpose());
    }
    SymFactor::new(f.qr().r().transpose())
}

/// Gramians for balancing against the Fisher information: the prior and `H`.
pub fn bth_gramians(setup: &InferenceSetup) -> Result<GramianPair> {
    Ok(GramianPair {
        reach: setup.prior().clone(),
        obs: fisher_factor(setup)?,
        provenance: Provenance::Fisher,
        residuals: (None, None),
    })
}

/// Whether `Γ` is an admissible infinite reachability Gramian for `A`:
/// `λ_max(AΓ + ΓA^T) <= 1e-10 ||AΓ + ΓA^T||_2`. Returns the flag and `λ_max`.
pub fn compatibility_check(a: &DenseMatrix, prior: &SymFactor) -> Result<(bool, f64)> {
    if a.nrows() != prior.dim() || !a.is_square() {
        return Err(Error::Dimension(format!(
            "A is {}x{} but the prior has dimension {}",
            a.nrows(),
            a.ncols(),
            prior.dim()
        )));
    }
    let g = prior.gram();
    let ag = a * &g;
    let m = &ag + ag.transpose();
    let eig = sym_eigen(&m)?;
    let top = eig.values.first().copied().unwrap_or(0.0);
    let norm2 = eig.values.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()));
    Ok((top <= COMPATIBILITY_TOL * norm2, top))
}

/// Modify a prior so that it becomes compatible: the positive part of
/// `AΓ + ΓA^T` is clipped and the Lyapunov equation re-solved.
pub fn make_compatible_prior(system: &LtiSystem, prior: &SymFactor) -> Result<SymFactor> {
    let a = system.a();
    if a.nrows() != prior.dim() {
        return Err(Error::Dimension(format!(
            "A is {0}x{0} but the prior has dimension {1}",
            a.nrows(),
            prior.dim()
        )));
    }
    if system.kind() != TimeKind::Continuous {
        return Err(Error::Config(
            "prior modification is defined for continuous-time systems".into(),
        ));
    }
    system.check_stable()?;
    let g = prior.gram();
    let ag = a * &g;
    let m = &ag + ag.transpose();
    let eig = sym_eigen(&m)?;
    let mut v = eig.vectors.clone();
    for (j, &lam) in eig.values.iter().enumerate() {
        let s = lam.min(0.0);
        v.column_mut(j).scale_mut(s);
    }
    // A Γ̃ + Γ̃ A^T = V Λ̃ V^T, i.e. W = -V Λ̃ V^T in A X + X A^T + W = 0
    let w = -(v * eig.vectors.transpose());
    let x = solve_continuous_lyapunov(a, &crate::linalg::symmetrize(&w))?;
    let factor = cholesky_psd(&x, DEFAULT_CLIP_TOL)?;
    let pivots = factor.base().clone().lu().u().diagonal().abs();
    if !factor.is_square() || pivots.min() <= 1e-14 * pivots.max() {
        return Err(Error::Degenerate(
            "modified prior is not positive definite".into(),
        ));
    }
    Ok(factor)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(a: f64) -> LtiSystem {
        LtiSystem::continuous(
            DenseMatrix::from_element(1, 1, a),
            DenseMatrix::from_element(1, 1, 1.0),
        )
        .unwrap()
    }

    fn one(v: f64) -> DenseMatrix {
        DenseMatrix::from_element(1, 1, v)
    }

    #[test]
    fn infinite_scalar_examples() {
        let g = infinite_gramians(&scalar(-1.0), &one(1.0), &one(1.0)).unwrap();
        assert!((g.reach.gram()[(0, 0)] - 0.5).abs() < 1e-14);
        assert!((g.obs.gram()[(0, 0)] - 0.5).abs() < 1e-14);
        let q = infinite_noisy_observability(&scalar(-1.0), &one(0.25)).unwrap();
        assert!((q.gram()[(0, 0)] - 2.0).abs() < 1e-14);
        let disc = LtiSystem::discrete(one(0.5), one(1.0)).unwrap();
        let p = infinite_reachability(&disc, &one(1.0)).unwrap();
        assert!((p.gram()[(0, 0)] - 4.0 / 3.0).abs() < 1e-14);
        assert!(matches!(
            infinite_gramians(&scalar(1.0), &one(1.0), &one(1.0)),
            Err(Error::Stability(_))
        ));
    }

    #[test]
    fn time_limited_scalar_examples() {
        let p = tl_reachability(&scalar(-1.0), &one(1.0), 1.0)
            .unwrap()
            .gram()[(0, 0)];
        assert!((p - (1.0 - (-2.0f64).exp()) / 2.0).abs() < 1e-10);
        let p = tl_reachability(&scalar(0.0), &one(1.0), 2.0)
            .unwrap()
            .gram()[(0, 0)];
        assert!((p - 2.0).abs() < 1e-10);
        let p = tl_reachability(&scalar(-1.0), &one(1.0), 40.0)
            .unwrap()
            .gram()[(0, 0)];
        assert!((p - 0.5).abs() < 1e-15);
        let q = tl_noisy_observability(&scalar(1.0), &one(1.0), 1.0)
            .unwrap()
            .gram()[(0, 0)];
        assert!((q - ((2.0f64).exp() - 1.0) / 2.0).abs() < 1e-10);
        let q4 = tl_noisy_observability(&scalar(1.0), &one(4.0), 1.0)
            .unwrap()
            .gram()[(0, 0)];
        assert!((q4 - q / 4.0).abs() < 1e-14 * q);
    }

    #[test]
    fn quadrature_examples() {
        let q = quadrature_gramian(&scalar(-1.0), &one(1.0), Side::Reach, 1.0, 1e-12).unwrap();
        assert!((q.gram()[(0, 0)] - (1.0 - (-2.0f64).exp()) / 2.0).abs() < 1e-10);
        let sys =
            LtiSystem::continuous(DenseMatrix::zeros(2, 2), DenseMatrix::identity(2, 2)).unwrap();
        let q =
            quadrature_gramian(&sys, &DenseMatrix::identity(2, 2), Side::Obs, 3.0, 1e-12).unwrap();
        assert!((q.gram() - DenseMatrix::identity(2, 2) * 3.0).norm() < 1e-12);
    }

    #[test]
    fn compatibility_examples() {
        let (ok, defect) = compatibility_check(&one(-1.0), &SymFactor::identity(1)).unwrap();
        assert!(ok && (defect + 2.0).abs() < 1e-14);
        let (ok, defect) = compatibility_check(&one(1.0), &SymFactor::identity(1)).unwrap();
        assert!(!ok && (defect - 2.0).abs() < 1e-14);
        let fixed = make_compatible_prior(&scalar(-1.0), &SymFactor::identity(1)).unwrap();
        assert!((fixed.gram()[(0, 0)] - 1.0).abs() < 1e-12);
    }
}
