//! Incremental 4D-Var for a linear time-invariant discrete model, with an
//! optional balanced-truncation inner loop.

use nalgebra::{Cholesky, DVector};

use crate::error::{Error, Result};
use crate::gramians::{tl_noisy_observability_with, GramianPair, GramianRoute, Provenance};
use crate::linalg::{symmetrize, DenseMatrix, SymFactor};
use crate::models::{InferenceSetup, LtiSystem, MeasurementSet, TimeKind};
use crate::reduction::BalancedReduction;

pub const DEFAULT_TOL: f64 = 1e-10;
const NORMAL_RESIDUAL_TOL: f64 = 1e-10;

/// Strong-constraint 4D-Var with observations `m_k` at steps `k = 0..=n`.
#[derive(Debug, Clone)]
pub struct FourDVarProblem {
    model: LtiSystem,
    background: DVector<f64>,
    prior: SymFactor,
    noise_cov: DenseMatrix,
    noise_chol: DenseMatrix,
    observations: Vec<DVector<f64>>,
    /// `L_ε^{-1} C A^k`, stacked over `k = 0..=n`.
    whitened_forward: DenseMatrix,
}

impl FourDVarProblem {
    pub fn new(
        model: LtiSystem,
        background: DVector<f64>,
        prior: SymFactor,
        noise_cov: DenseMatrix,
        observations: Vec<DVector<f64>>,
    ) -> Result<Self> {
        if model.kind() != TimeKind::Discrete {
            return Err(Error::Config("4D-Var needs a discrete-time model".into()));
        }
        let d = model.state_dim();
        let p = model.output_dim();
        if background.len() != d || prior.dim() != d || !prior.is_square() {
            return Err(Error::Dimension(format!(
                "background and prior must have dimension {d}"
            )));
        }
        if observations.is_empty() {
            return Err(Error::Config(
                "4D-Var needs at least the k = 0 observation".into(),
            ));
        }
        if let Some(bad) = observations.iter().find(|m| m.len() != p) {
            return Err(Error::Dimension(format!(
                "observation has {} entries, expected {p}",
                bad.len()
            )));
        }
        let noise_chol = Cholesky::new(noise_cov.clone())
            .ok_or_else(|| Error::Definiteness("noise covariance is not positive definite".into()))?
            .unpack();
        let n1 = observations.len();
        let mut whitened_forward = DenseMatrix::zeros(n1 * p, d);
        let mut row = model.c().clone();
        for k in 0..n1 {
            if k > 0 {
                row = &row * model.a();
            }
            let mut block = row.clone();
            noise_chol.solve_lower_triangular_mut(&mut block);
            whitened_forward.rows_mut(k * p, p).copy_from(&block);
        }
        Ok(Self {
            model,
            background,
            prior,
            noise_cov,
            noise_chol,
            observations,
            whitened_forward,
        })
    }

    pub fn model(&self) -> &LtiSystem {
        &self.model
    }

    pub fn background(&self) -> &DVector<f64> {
        &self.background
    }

    pub fn prior(&self) -> &SymFactor {
        &self.prior
    }

    pub fn noise_cov(&self) -> &DenseMatrix {
        &self.noise_cov
    }

    pub fn observations(&self) -> &[DVector<f64>] {
        &self.observations
    }

    /// Index of the last observation.
    pub fn n(&self) -> usize {
        self.observations.len() - 1
    }

    /// The equivalent Bayesian problem: zero prior mean shifted by the
    /// background is left to the caller; times are the steps `0..=n`.
    pub fn inference_setup(&self) -> Result<InferenceSetup> {
        InferenceSetup::new(
            self.model.clone(),
            self.prior.clone(),
            self.noise_cov.clone(),
            (0..=self.n()).map(|k| k as f64).collect(),
        )
    }

    /// Stacked observations as a [`MeasurementSet`] for [`Self::inference_setup`].
    pub fn measurement_set(&self) -> MeasurementSet {
        let p = self.model.output_dim();
        let mut values = DVector::zeros(self.observations.len() * p);
        for (k, m) in self.observations.iter().enumerate() {
            values.rows_mut(k * p, p).copy_from(m);
        }
        MeasurementSet {
            values,
            output_dim: p,
            seed: 0,
            truth: DVector::zeros(self.model.state_dim()),
        }
    }

    fn whiten(&self, v: &DVector<f64>) -> DVector<f64> {
        self.noise_chol
            .solve_lower_triangular(v)
            .expect("noise Cholesky factor is nonsingular")
    }

    fn prior_solve(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        self.prior
            .base()
            .clone()
            .lu()
            .solve(v)
            .ok_or_else(|| Error::Definiteness("singular prior factor".into()))
    }

    /// Stacked whitened innovations `L_ε^{-1}(m_k - C A^k x)`.
    fn whitened_innovations(&self, x: &DVector<f64>) -> DVector<f64> {
        let p = self.model.output_dim();
        let mut out = DVector::zeros(self.observations.len() * p);
        for (k, m) in self.observations.iter().enumerate() {
            out.rows_mut(k * p, p).copy_from(&self.whiten(m));
        }
        out - &self.whitened_forward * x
    }
}

/// `J(x) = ½‖x - x_b‖²_{Γ_pr^{-1}} + ½ Σ_k ‖m_k - C A^k x‖²_{Γ_ε^{-1}}`.
pub fn cost(problem: &FourDVarProblem, x0: &DVector<f64>) -> Result<f64> {
    check_len(problem, x0)?;
    let z = problem.prior_solve(&(x0 - &problem.background))?;
    let r = problem.whitened_innovations(x0);
    Ok(0.5 * (z.norm_squared() + r.norm_squared()))
}

/// `∇J(x) = Γ_pr^{-1}(x - x_b) - Σ_k (C A^k)^T Γ_ε^{-1} (m_k - C A^k x)`.
pub fn gradient(problem: &FourDVarProblem, x0: &DVector<f64>) -> Result<DVector<f64>> {
    check_len(problem, x0)?;
    let s = problem.prior.base();
    let z = problem.prior_solve(&(x0 - &problem.background))?;
    let back = s
        .transpose()
        .lu()
        .solve(&z)
        .ok_or_else(|| Error::Definiteness("singular prior factor".into()))?;
    let r = problem.whitened_innovations(x0);
    Ok(back - problem.whitened_forward.transpose() * r)
}

fn check_len(problem: &FourDVarProblem, x: &DVector<f64>) -> Result<()> {
    let d = problem.model.state_dim();
    if x.len() != d {
        return Err(Error::Dimension(format!(
            "state has {} entries, expected {d}",
            x.len()
        )));
    }
    Ok(())
}

/// Solve the whitened normal equations `(I + G^T G) z = b` and return `S z`.
///
/// With `x = S z`, the inner-loop normal equations
/// `(Γ_pr^{-1} + Σ (CA^k)^T Γ_ε^{-1} C A^k) δ = Γ_pr^{-1}(x_b - x) + Σ (CA^k)^T Γ_ε^{-1} d_k`
/// become `(I + F^T F) z = S^{-1}(x_b - x) + F^T w` with `F = L_ε^{-1} [C A^k] S`.
fn whitened_solve(
    s: &DenseMatrix,
    g: &DenseMatrix,
    background_shift: &DVector<f64>,
    innovations: &DVector<f64>,
) -> Result<DVector<f64>> {
    let d = g.ncols();
    let k = DenseMatrix::identity(d, d) + symmetrize(&(g.transpose() * g));
    let rhs = background_shift + g.transpose() * innovations;
    let chol = Cholesky::new(k.clone())
        .ok_or_else(|| Error::Definiteness("inner-loop Hessian is not positive definite".into()))?;
    let z = chol.solve(&rhs);
    let residual = (&k * &z - &rhs).norm();
    let scale = rhs.norm().max(k.norm() * z.norm());
    if residual > NORMAL_RESIDUAL_TOL * scale {
        return Err(Error::Residual {
            what: "inner-loop normal equations",
            residual,
            bound: NORMAL_RESIDUAL_TOL * scale,
        });
    }
    Ok(s * z)
}

/// Optimal increment `δx_0` of the quadratic inner loop around `current`.
pub fn inner_loop_solve(problem: &FourDVarProblem, current: &DVector<f64>) -> Result<DVector<f64>> {
    check_len(problem, current)?;
    let shift = problem.prior_solve(&(&problem.background - current))?;
    let innovations = problem.whitened_innovations(current);
    let s = problem.prior.base();
    whitened_solve(s, &(&problem.whitened_forward * s), &shift, &innovations)
}

/// Inner loop in the balanced coordinates `x = x_cur + T δx̂`, with the
/// reduced tangent model `(Â, Ĉ)`, `Γ̂_pr = T_inv Γ_pr T_inv^T` and the
/// background offset `T_inv (x_b - x_cur)`. Returns the lifted increment.
pub fn reduced_inner_loop(
    problem: &FourDVarProblem,
    reduction: &BalancedReduction,
    current: &DVector<f64>,
) -> Result<DVector<f64>> {
    check_len(problem, current)?;
    let d = problem.model.state_dim();
    if reduction.t.nrows() != d {
        return Err(Error::Dimension(format!(
            "reduction acts on {} states, problem has {d}",
            reduction.t.nrows()
        )));
    }
    let p = problem.model.output_dim();
    let r = reduction.rank();
    let prior_hat = Cholesky::new(reduction.reduced_prior.clone())
        .ok_or_else(|| Error::Definiteness("reduced prior is not positive definite".into()))?;
    let s_hat = prior_hat.l();

    let mut g = DenseMatrix::zeros(problem.observations.len() * p, r);
    let mut row = reduction.reduced_c.clone();
    for k in 0..problem.observations.len() {
        if k > 0 {
            row = &row * &reduction.reduced_a;
        }
        let mut block = &row * &s_hat;
        problem.noise_chol.solve_lower_triangular_mut(&mut block);
        g.rows_mut(k * p, p).copy_from(&block);
    }
    let offset = &reduction.t_inv * (&problem.background - current);
    let shift = s_hat
        .solve_lower_triangular(&offset)
        .ok_or_else(|| Error::Definiteness("singular reduced prior".into()))?;
    let innovations = problem.whitened_innovations(current);
    let dx_hat = whitened_solve(&s_hat, &g, &shift, &innovations)?;
    Ok(&reduction.t * dx_hat)
}

#[derive(Debug, Clone)]
pub struct OuterLoopResult {
    pub x0: DVector<f64>,
    /// Number of increments applied.
    pub iterations: usize,
    /// Cost at the starting point and after every applied increment.
    pub cost_trace: Vec<f64>,
    pub converged: bool,
}

/// Outer loop from `x_0 = x_b`: apply inner-loop increments until
/// `‖δ‖ <= tol (1 + ‖x‖)` or `max_iter` increments have been applied.
pub fn outer_loop(
    problem: &FourDVarProblem,
    reduction: Option<&BalancedReduction>,
    tol: f64,
    max_iter: usize,
) -> Result<OuterLoopResult> {
    if !(tol > 0.0) {
        return Err(Error::Config(format!(
            "tolerance must be positive, got {tol}"
        )));
    }
    let mut x = problem.background.clone();
    let mut trace = vec![cost(problem, &x)?];
    let mut iterations = 0;
    loop {
        let delta = match reduction {
            Some(red) => reduced_inner_loop(problem, red, &x)?,
            None => inner_loop_solve(problem, &x)?,
        };
        if delta.norm() <= tol * (1.0 + x.norm()) {
            return Ok(OuterLoopResult {
                x0: x,
                iterations,
                cost_trace: trace,
                converged: true,
            });
        }
        if iterations == max_iter {
            return Ok(OuterLoopResult {
                x0: x,
                iterations,
                cost_trace: trace,
                converged: false,
            });
        }
        x += delta;
        iterations += 1;
        trace.push(cost(problem, &x)?);
    }
}

/// Gramians for the reduced inner loop: the prior and
/// `Σ_{k=0}^{t_e-1} (A^T)^k C^T Γ_ε^{-1} C A^k`.
pub fn fourdvar_gramians(problem: &FourDVarProblem, t_e: usize) -> Result<GramianPair> {
    let q = tl_noisy_observability_with(
        &problem.model,
        &problem.noise_cov,
        t_e as f64,
        GramianRoute::Auto,
    )?;
    Ok(GramianPair {
        reach: problem.prior.clone(),
        obs: q,
        provenance: Provenance::TimeLimited(t_e as f64),
        residuals: (None, None),
    })
}
