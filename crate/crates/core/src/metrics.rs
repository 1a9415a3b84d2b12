//! Förstner distance between covariances and Bayes risk of mean estimators.

use nalgebra::{Cholesky, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::inference::{forward_map, FullPosterior, LinearMeanMap};
use crate::linalg::{svd, sym_eigen, sym_generalized_eig, symmetrize, DenseMatrix, SymFactor};
use crate::models::{generate_with_forward, InferenceSetup, MeasurementSet};
use crate::rng::{compensated_sum, trial_seed};

const SPD_TOL: f64 = 1e-14;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RiskKind {
    Exact,
    Empirical { n_trials: usize, seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RiskEstimate {
    pub value: f64,
    pub kind: RiskKind,
    pub std_error: Option<f64>,
}

fn check_spd(m: &DenseMatrix, what: &str) -> Result<()> {
    let eig = sym_eigen(m)?;
    let top = eig.values.first().copied().unwrap_or(0.0);
    let low = eig.values.last().copied().unwrap_or(0.0);
    if !(top > 0.0) || low <= SPD_TOL * top {
        return Err(Error::Definiteness(format!(
            "{what} is not positive definite (eigenvalues {low:e} .. {top:e})"
        )));
    }
    Ok(())
}

/// `sqrt(Σ ln² σ_i)` over the generalized eigenvalues of `(A, B)`.
pub fn foerstner_distance(a: &DenseMatrix, b: &DenseMatrix) -> Result<f64> {
    if a.shape() != b.shape() || !a.is_square() {
        return Err(Error::Dimension(format!(
            "Förstner distance needs equal square matrices, got {:?} and {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let (a, b) = (symmetrize(a), symmetrize(b));
    check_spd(&a, "first argument")?;
    check_spd(&b, "second argument")?;
    let l = Cholesky::new(b.clone())
        .ok_or_else(|| Error::Definiteness("second argument is not positive definite".into()))?
        .unpack();
    let eig = sym_generalized_eig(&a, &SymFactor::new(l)?)?;
    Ok(eig
        .values
        .iter()
        .map(|s| s.ln().powi(2))
        .sum::<f64>()
        .sqrt())
}

/// Förstner distance between `C_a C_a^T` and `C_b C_b^T` from square
/// factors: the pencil eigenvalues are the squared singular values of
/// `C_b^{-1} C_a`.
pub fn foerstner_factored(c_a: &DenseMatrix, c_b: &DenseMatrix) -> Result<f64> {
    if c_a.shape() != c_b.shape() || !c_a.is_square() {
        return Err(Error::Dimension(format!(
            "Förstner distance needs equal square factors, got {:?} and {:?}",
            c_a.shape(),
            c_b.shape()
        )));
    }
    let z = c_b
        .clone()
        .lu()
        .solve(c_a)
        .ok_or_else(|| Error::Definiteness("singular covariance factor".into()))?;
    let s = svd(&z)?.s;
    if s.last().is_some_and(|&v| !(v > 0.0)) {
        return Err(Error::Definiteness("singular covariance factor".into()));
    }
    Ok(s.iter().map(|v| (2.0 * v.ln()).powi(2)).sum::<f64>().sqrt())
}

/// `E‖x - N m‖²_{Γ_pos^{-1}}` for the linear estimator `map`, with `x` and `m`
/// drawn from the reference problem.
///
/// With `Δ = S^{-1} E J^T - K^{-1} F^T`, the risk is
/// `d + ‖L_K^T Δ‖² + ‖L_K^T Δ F‖²`, which keeps the excess over the optimum
/// free of cancellation.
pub fn exact_bayes_risk(map: &LinearMeanMap, reference: &FullPosterior) -> Result<RiskEstimate> {
    let f = &reference.f;
    let d = reference.prior_base().ncols();
    if map.lift.nrows() != d || map.data.nrows() != f.nrows() {
        return Err(Error::Dimension(format!(
            "estimator is {}x{} (via {} data rows); problem has d = {d}, {} data rows",
            map.lift.nrows(),
            map.lift.ncols(),
            map.data.nrows(),
            f.nrows()
        )));
    }
    let l = &reference.k_chol;
    let w = reference.prior_solve(&map.lift)?;
    // K^{-1} F^T via two triangular solves
    let y = l
        .solve_lower_triangular(&f.transpose())
        .ok_or_else(|| Error::Definiteness("singular posterior precision".into()))?;
    let k_inv_ft = l
        .transpose()
        .solve_upper_triangular(&y)
        .ok_or_else(|| Error::Definiteness("singular posterior precision".into()))?;
    let delta = w * map.data.transpose() - k_inv_ft;
    let a = l.transpose() * &delta;
    let b = &a * f;
    let value = d as f64 + a.norm_squared() + b.norm_squared();
    Ok(RiskEstimate {
        value,
        kind: RiskKind::Exact,
        std_error: None,
    })
}

/// Exact Bayes risk for `setup`, building the full posterior on the way.
pub fn exact_bayes_risk_for(map: &LinearMeanMap, setup: &InferenceSetup) -> Result<RiskEstimate> {
    exact_bayes_risk(map, &FullPosterior::new(setup)?)
}

/// Draws for `n_trials` independent experiments; trial `j` uses seed
/// `trial_seed(seed, j)`.
pub fn draw_trials(
    setup: &InferenceSetup,
    forward: &crate::inference::ForwardMap,
    n_trials: usize,
    seed: u64,
) -> Vec<MeasurementSet> {
    (0..n_trials)
        .into_par_iter()
        .map(|j| generate_with_forward(setup, forward, trial_seed(seed, j as u64)))
        .collect()
}

/// Sample mean and standard error of `‖x_j - μ_j‖²_{Γ_pos^{-1}}` over trials.
pub fn empirical_risk_on<M>(
    trials: &[MeasurementSet],
    reference: &FullPosterior,
    seed: u64,
    method: M,
) -> Result<RiskEstimate>
where
    M: Fn(&MeasurementSet) -> Result<DVector<f64>> + Sync,
{
    let n = trials.len();
    if n < 2 {
        return Err(Error::Config(format!("need at least 2 trials, got {n}")));
    }
    let losses: Vec<f64> = trials
        .par_iter()
        .map(|m| {
            let mu = method(m)?;
            reference.precision_norm_sq(&(&m.truth - mu))
        })
        .collect::<Result<_>>()?;
    let mean = compensated_sum(losses.iter().copied()) / n as f64;
    let var = compensated_sum(losses.iter().map(|l| (l - mean).powi(2))) / (n - 1) as f64;
    Ok(RiskEstimate {
        value: mean,
        kind: RiskKind::Empirical { n_trials: n, seed },
        std_error: Some((var / n as f64).sqrt()),
    })
}

/// Monte-Carlo Bayes risk of a posterior-mean procedure.
pub fn empirical_bayes_risk<M>(
    method: M,
    setup: &InferenceSetup,
    n_trials: usize,
    seed: u64,
) -> Result<RiskEstimate>
where
    M: Fn(&MeasurementSet) -> Result<DVector<f64>> + Sync,
{
    if n_trials < 2 {
        return Err(Error::Config(format!(
            "need at least 2 trials, got {n_trials}"
        )));
    }
    let forward = forward_map(setup)?;
    let reference = FullPosterior::with_forward(setup, &forward)?;
    let trials = draw_trials(setup, &forward, n_trials, seed);
    empirical_risk_on(&trials, &reference, seed, method)
}
