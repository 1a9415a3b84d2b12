//! Full, balanced-reduced and optimal low-rank posteriors for the
//! initial-condition inference problem.
//!
//! Everything is assembled in coordinates whitened by the prior factor `S`
//! (`x = S z`) and the noise Cholesky factor `L_ε`. With `F` the stacked
//! whitened forward map, the posterior precision in `z` is `K = I + F^T F`.

use nalgebra::{Cholesky, DVector, Dyn, LU};

use crate::error::{Error, Result};
use crate::linalg::{svd, symmetrize, DenseMatrix};

pub use crate::gramians::bth_gramians;
use crate::models::{InferenceSetup, MeasurementSet, StepPropagators};
use crate::reduction::BalancedReduction;

/// Singular values of `F` below `OLR_TOL * τ_1` are treated as zero. The
/// eigenvalues are `τ_i^2`, but taking them from an SVD of `F` resolves
/// `τ_i` to roughly `ε τ_1`, so the cut is placed on `τ_i`.
pub const OLR_TOL: f64 = 1e-14;

#[derive(Debug, Clone)]
pub struct GaussianBelief {
    pub mean: DVector<f64>,
    pub cov: DenseMatrix,
}

/// Stacked forward operator `G = [C e^{A t_1}; ...; C e^{A t_n}]`.
#[derive(Debug, Clone)]
pub struct ForwardMap {
    stacked: DenseMatrix,
    output_dim: usize,
    times: Vec<f64>,
}

impl ForwardMap {
    pub fn n_times(&self) -> usize {
        self.times.len()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    /// `(n d_out) x d` stacked blocks.
    pub fn stacked(&self) -> &DenseMatrix {
        &self.stacked
    }

    /// Block `k`, i.e. `C e^{A t_k}`.
    pub fn block(&self, k: usize) -> DenseMatrix {
        self.stacked
            .rows(k * self.output_dim, self.output_dim)
            .into_owned()
    }

    /// `L_ε^{-1}` applied to every block.
    pub fn whitened(&self, setup: &InferenceSetup) -> DenseMatrix {
        let mut f = self.stacked.clone();
        setup.whiten_blocks(&mut f);
        f
    }

    /// `F = L_ε^{-1} G S`, the data operator in whitened state and data
    /// coordinates.
    pub fn prior_whitened(&self, setup: &InferenceSetup) -> DenseMatrix {
        self.whitened(setup) * setup.prior().base()
    }
}

/// Blocks `C Φ_k` for a time grid, propagated one step at a time.
fn stacked_blocks(
    a: &DenseMatrix,
    c: &DenseMatrix,
    kind: crate::models::TimeKind,
    times: &[f64],
) -> Result<DenseMatrix> {
    let p = c.nrows();
    let steps = StepPropagators::new(a, kind, times)?;
    let mut out = DenseMatrix::zeros(times.len() * p, a.ncols());
    let mut row = c.clone();
    for k in 0..times.len() {
        row = &row * steps.step(k);
        out.rows_mut(k * p, p).copy_from(&row);
    }
    Ok(out)
}

pub fn forward_map(setup: &InferenceSetup) -> Result<ForwardMap> {
    let sys = setup.system();
    Ok(ForwardMap {
        stacked: stacked_blocks(sys.a(), sys.c(), sys.kind(), setup.times())?,
        output_dim: setup.output_dim(),
        times: setup.times().to_vec(),
    })
}

/// Whitened measurements `L_ε^{-1} m_k`, stacked.
pub fn whiten_measurements(setup: &InferenceSetup, m: &MeasurementSet) -> Result<DVector<f64>> {
    let expected = setup.n_times() * setup.output_dim();
    if m.values.len() != expected || m.output_dim != setup.output_dim() {
        return Err(Error::Dimension(format!(
            "expected {expected} measurement values, got {}",
            m.values.len()
        )));
    }
    let mut w = m.as_column();
    setup.whiten_blocks(&mut w);
    Ok(w.column(0).into_owned())
}

/// Linear posterior-mean estimator `μ(m) = E J^T w`, where `w` are the
/// whitened measurements.
#[derive(Debug, Clone)]
pub struct LinearMeanMap {
    /// `d x q` lift.
    pub lift: DenseMatrix,
    /// `(n d_out) x q` whitened data operator.
    pub data: DenseMatrix,
}

impl LinearMeanMap {
    pub fn apply(&self, whitened: &DVector<f64>) -> DVector<f64> {
        &self.lift * (self.data.transpose() * whitened)
    }

    /// The map as an explicit `d x (n d_out)` matrix acting on whitened data.
    pub fn matrix(&self) -> DenseMatrix {
        &self.lift * self.data.transpose()
    }
}

/// A Gaussian posterior (or approximation) in factored form:
/// `Γ = C C^T` and a linear mean map.
#[derive(Debug, Clone)]
pub struct LinearPosterior {
    pub cov_factor: DenseMatrix,
    pub mean_map: LinearMeanMap,
}

impl LinearPosterior {
    pub fn cov(&self) -> DenseMatrix {
        symmetrize(&(&self.cov_factor * self.cov_factor.transpose()))
    }

    pub fn mean(&self, setup: &InferenceSetup, m: &MeasurementSet) -> Result<DVector<f64>> {
        Ok(self.mean_map.apply(&whiten_measurements(setup, m)?))
    }

    pub fn belief(&self, setup: &InferenceSetup, m: &MeasurementSet) -> Result<GaussianBelief> {
        Ok(GaussianBelief {
            mean: self.mean(setup, m)?,
            cov: self.cov(),
        })
    }
}

/// Posterior for whitened data operator `g` (so `K = I + g^T g`) and prior factor `s`.
fn whitened_posterior(s: &DenseMatrix, g: &DenseMatrix) -> Result<(LinearPosterior, DenseMatrix)> {
    let d = s.ncols();
    let k = DenseMatrix::identity(d, d) + symmetrize(&(g.transpose() * g));
    let chol = Cholesky::new(k).ok_or_else(|| {
        Error::Definiteness("posterior precision is not positive definite".into())
    })?;
    let l = chol.l();
    // C = S L^{-T}
    let l_inv_t = l
        .transpose()
        .solve_upper_triangular(&DenseMatrix::identity(d, d))
        .ok_or_else(|| Error::Definiteness("singular posterior precision".into()))?;
    let cov_factor = s * l_inv_t;
    let lift = s * chol.inverse();
    Ok((
        LinearPosterior {
            cov_factor,
            mean_map: LinearMeanMap {
                lift,
                data: g.clone(),
            },
        },
        l,
    ))
}

/// The full posterior with the factors needed to evaluate `Γ_pos^{-1}` norms.
#[derive(Debug, Clone)]
pub struct FullPosterior {
    pub posterior: LinearPosterior,
    /// Lower Cholesky factor of the whitened precision `K = I + F^T F`.
    pub k_chol: DenseMatrix,
    /// `F = L_ε^{-1} G S`.
    pub f: DenseMatrix,
    prior_base: DenseMatrix,
    prior_lu: LU<f64, Dyn, Dyn>,
}

impl FullPosterior {
    pub fn new(setup: &InferenceSetup) -> Result<Self> {
        let forward = forward_map(setup)?;
        Self::with_forward(setup, &forward)
    }

    pub fn with_forward(setup: &InferenceSetup, forward: &ForwardMap) -> Result<Self> {
        let f = forward.prior_whitened(setup);
        let s = setup.prior().base().clone();
        let (posterior, k_chol) = whitened_posterior(&s, &f)?;
        Ok(Self {
            posterior,
            k_chol,
            f,
            prior_lu: s.clone().lu(),
            prior_base: s,
        })
    }

    pub fn prior_base(&self) -> &DenseMatrix {
        &self.prior_base
    }

    /// `S^{-1} x` for matrices.
    pub fn prior_solve(&self, x: &DenseMatrix) -> Result<DenseMatrix> {
        self.prior_lu
            .solve(x)
            .ok_or_else(|| Error::Definiteness("singular prior factor".into()))
    }

    /// `L_K^T S^{-1} x`, so that `‖x‖²_{Γ_pos^{-1}}` is its squared norm.
    pub fn precision_whiten(&self, x: &DenseMatrix) -> Result<DenseMatrix> {
        Ok(self.k_chol.transpose() * self.prior_solve(x)?)
    }

    /// `‖x‖²_{Γ_pos^{-1}}`.
    pub fn precision_norm_sq(&self, x: &DVector<f64>) -> Result<f64> {
        let z = self
            .prior_lu
            .solve(x)
            .ok_or_else(|| Error::Definiteness("singular prior factor".into()))?;
        Ok((self.k_chol.transpose() * z).norm_squared())
    }
}

pub fn full_posterior(setup: &InferenceSetup, m: &MeasurementSet) -> Result<GaussianBelief> {
    FullPosterior::new(setup)?.posterior.belief(setup, m)
}

/// Whitened reduced blocks `L_ε^{-1} Ĉ e^{Â t_k}`, stacked `(n d_out) x r`.
pub fn reduced_blocks(
    setup: &InferenceSetup,
    reduction: &BalancedReduction,
) -> Result<DenseMatrix> {
    if reduction.t_inv.ncols() != setup.state_dim() {
        return Err(Error::Dimension(format!(
            "reduction acts on {} states, setup has {}",
            reduction.t_inv.ncols(),
            setup.state_dim()
        )));
    }
    let mut j = stacked_blocks(
        &reduction.reduced_a,
        &reduction.reduced_c,
        reduction.kind,
        setup.times(),
    )?;
    setup.whiten_blocks(&mut j);
    Ok(j)
}

/// Posterior of the setup with the forward map replaced by
/// `[Ĉ e^{Â t_k}] T_inv`.
pub fn reduced_model(
    setup: &InferenceSetup,
    reduction: &BalancedReduction,
) -> Result<LinearPosterior> {
    let j = reduced_blocks(setup, reduction)?;
    let phi = &reduction.t_inv * setup.prior().base();
    let g = &j * &phi;
    let (mut post, _) = whitened_posterior(setup.prior().base(), &g)?;
    // μ = S K_r^{-1} Φ^T J^T w, kept in rank-r form
    post.mean_map = LinearMeanMap {
        lift: &post.mean_map.lift * phi.transpose(),
        data: j,
    };
    Ok(post)
}

pub fn reduced_posterior(
    setup: &InferenceSetup,
    reduction: &BalancedReduction,
    m: &MeasurementSet,
) -> Result<GaussianBelief> {
    reduced_model(setup, reduction)?.belief(setup, m)
}

/// Generalized eigenpairs of `(H, Γ_pr^{-1})` in whitened form: `τ_i` are the
/// singular values of `F`, `Y` its right singular vectors.
#[derive(Debug, Clone)]
pub struct OlrSpectrum {
    /// `τ_i^2`, non-increasing; length `d`.
    pub tau_sq: Vec<f64>,
    /// `d x d` orthonormal columns `y_i`; `v_i = S y_i`.
    pub y: DenseMatrix,
    prior_base: DenseMatrix,
    f: DenseMatrix,
    data_dim: usize,
}

impl OlrSpectrum {
    pub fn new(setup: &InferenceSetup, f: &DenseMatrix) -> Result<Self> {
        let d = setup.state_dim();
        let dec = svd(f)?;
        let mut tau_sq: Vec<f64> = dec.s.iter().map(|s| s * s).collect();
        tau_sq.resize(d, 0.0);
        let y = if dec.v.ncols() == d {
            dec.v
        } else {
            complete_basis(&dec.v)
        };
        Ok(Self {
            tau_sq,
            y,
            prior_base: setup.prior().base().clone(),
            f: f.clone(),
            data_dim: f.nrows(),
        })
    }

    /// Number of `τ_i` above `OLR_TOL τ_1`.
    pub fn informative(&self) -> usize {
        let top = self.tau_sq.first().copied().unwrap_or(0.0);
        let cut = OLR_TOL * OLR_TOL * top;
        self.tau_sq
            .iter()
            .take_while(|&&t| t > 0.0 && t >= cut)
            .count()
    }

    /// Rank-`r` optimal approximation.
    pub fn truncate(&self, r: usize) -> Result<LinearPosterior> {
        let d = self.y.nrows();
        let max = d.min(self.data_dim);
        if r > max {
            return Err(Error::Rank {
                requested: r,
                usable: max,
            });
        }
        let k = r.min(self.informative());
        let yr = self.y.columns(0, k).into_owned();
        // (I - Y diag(c) Y^T)^2 = I - Y diag(τ²/(1+τ²)) Y^T
        let mut shrink = yr.clone();
        let mut lift_w = yr.clone();
        for i in 0..k {
            let t = self.tau_sq[i];
            shrink
                .column_mut(i)
                .scale_mut(1.0 - (1.0 + t).sqrt().recip());
            lift_w.column_mut(i).scale_mut((1.0 + t).recip());
        }
        let whitened_factor = DenseMatrix::identity(d, d) - shrink * yr.transpose();
        Ok(LinearPosterior {
            cov_factor: &self.prior_base * whitened_factor,
            mean_map: LinearMeanMap {
                lift: &self.prior_base * lift_w,
                data: &self.f * yr,
            },
        })
    }

    /// Closed-form Förstner distance of the rank-`r` covariance from `Γ_pos`.
    pub fn foerstner_tail(&self, r: usize) -> f64 {
        let k = r.min(self.informative());
        self.tau_sq[k..]
            .iter()
            .map(|t| t.ln_1p().powi(2))
            .sum::<f64>()
            .sqrt()
    }
}

/// Extend orthonormal columns to an orthonormal basis.
fn complete_basis(v: &DenseMatrix) -> DenseMatrix {
    let (d, k) = v.shape();
    let mut full = DenseMatrix::zeros(d, d);
    full.columns_mut(0, k).copy_from(v);
    // project the identity off span(v) and orthonormalize by QR
    let rest = DenseMatrix::identity(d, d) - v * v.transpose();
    let q = rest.qr().q();
    let mut filled = k;
    for j in 0..d {
        if filled == d {
            break;
        }
        let mut c = q.column(j).into_owned();
        for i in 0..filled {
            let proj = full.column(i).dot(&c);
            c -= full.column(i) * proj;
        }
        let n = c.norm();
        if n > 1e-8 {
            full.column_mut(filled).copy_from(&(c / n));
            filled += 1;
        }
    }
    full
}

pub fn olr_model(setup: &InferenceSetup, r: usize) -> Result<LinearPosterior> {
    let f = forward_map(setup)?.prior_whitened(setup);
    OlrSpectrum::new(setup, &f)?.truncate(r)
}

pub fn olr_posterior(
    setup: &InferenceSetup,
    m: &MeasurementSet,
    r: usize,
) -> Result<GaussianBelief> {
    olr_model(setup, r)?.belief(setup, m)
}
