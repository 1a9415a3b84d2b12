//! Dynamical models, inference problems and synthetic data.

mod matrix_market;

pub use matrix_market::{load_lti_matrix_market, read_matrix_market};

use nalgebra::{Cholesky, DVector};

use crate::error::{Error, Result};
use crate::inference::ForwardMap;
use crate::linalg::{
    cholesky_psd, eigenvalues, ensure_finite, ensure_square, expm, solve_continuous_lyapunov,
    solve_discrete_lyapunov, DenseMatrix, SymFactor, DEFAULT_CLIP_TOL,
};
use crate::rng::{NormalStream, STREAM_MEASUREMENTS, STREAM_PRIOR};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TimeKind {
    Continuous,
    Discrete,
}

/// `dx/dt = A x (+ B u)`, `y = C x`, or the discrete-time analogue.
#[derive(Debug, Clone)]
pub struct LtiSystem {
    a: DenseMatrix,
    b: Option<DenseMatrix>,
    c: DenseMatrix,
    kind: TimeKind,
}

impl LtiSystem {
    pub fn new(
        a: DenseMatrix,
        b: Option<DenseMatrix>,
        c: DenseMatrix,
        kind: TimeKind,
    ) -> Result<Self> {
        ensure_square(&a, "A")?;
        ensure_finite(&a, "A")?;
        ensure_finite(&c, "C")?;
        let d = a.nrows();
        if c.ncols() != d {
            return Err(Error::Dimension(format!(
                "C has {} columns but A is {d}x{d}",
                c.ncols()
            )));
        }
        if c.nrows() == 0 {
            return Err(Error::Dimension("C must have at least one row".into()));
        }
        if let Some(b) = &b {
            ensure_finite(b, "B")?;
            if b.nrows() != d {
                return Err(Error::Dimension(format!(
                    "B has {} rows but A is {d}x{d}",
                    b.nrows()
                )));
            }
        }
        Ok(Self { a, b, c, kind })
    }

    pub fn continuous(a: DenseMatrix, c: DenseMatrix) -> Result<Self> {
        Self::new(a, None, c, TimeKind::Continuous)
    }

    pub fn discrete(a: DenseMatrix, c: DenseMatrix) -> Result<Self> {
        Self::new(a, None, c, TimeKind::Discrete)
    }

    pub fn a(&self) -> &DenseMatrix {
        &self.a
    }

    pub fn b(&self) -> Option<&DenseMatrix> {
        self.b.as_ref()
    }

    pub fn c(&self) -> &DenseMatrix {
        &self.c
    }

    pub fn kind(&self) -> TimeKind {
        self.kind
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.c.nrows()
    }

    /// State transition over `dt`: `e^{A dt}`, or `A^dt` for integer `dt` in discrete time.
    pub fn propagator(&self, dt: f64) -> Result<DenseMatrix> {
        propagator(&self.a, self.kind, dt)
    }

    /// `max Re λ(A)`.
    pub fn spectral_abscissa(&self) -> Result<f64> {
        Ok(eigenvalues(&self.a)?
            .iter()
            .map(|z| z.re)
            .fold(f64::NEG_INFINITY, f64::max))
    }

    /// `max |λ(A)|`.
    pub fn spectral_radius(&self) -> Result<f64> {
        Ok(eigenvalues(&self.a)?
            .iter()
            .map(|z| z.norm())
            .fold(0.0, f64::max))
    }

    /// Asymptotic stability for the system's time kind.
    pub fn check_stable(&self) -> Result<()> {
        match self.kind {
            TimeKind::Continuous => {
                let alpha = self.spectral_abscissa()?;
                if alpha < 0.0 {
                    Ok(())
                } else {
                    Err(Error::Stability(alpha))
                }
            }
            TimeKind::Discrete => {
                let rho = self.spectral_radius()?;
                if rho < 1.0 {
                    Ok(())
                } else {
                    Err(Error::Stability(rho))
                }
            }
        }
    }
}

pub(crate) fn propagator(a: &DenseMatrix, kind: TimeKind, dt: f64) -> Result<DenseMatrix> {
    match kind {
        TimeKind::Continuous => expm(a, dt),
        TimeKind::Discrete => {
            let k = integer_steps(dt)?;
            Ok(matrix_power(a, k))
        }
    }
}

pub(crate) fn integer_steps(t: f64) -> Result<u64> {
    let k = t.round();
    if t < 0.0 || (t - k).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "discrete-time systems need non-negative integer times, got {t}"
        )));
    }
    Ok(k as u64)
}

pub(crate) fn matrix_power(a: &DenseMatrix, mut k: u64) -> DenseMatrix {
    let n = a.nrows();
    let mut result = DenseMatrix::identity(n, n);
    let mut base = a.clone();
    while k > 0 {
        if k & 1 == 1 {
            result = &result * &base;
        }
        k >>= 1;
        if k > 0 {
            base = &base * &base;
        }
    }
    result
}

/// Per-step propagators for a time grid starting at 0, sharing one matrix
/// per distinct gap.
pub(crate) struct StepPropagators {
    mats: Vec<DenseMatrix>,
    index: Vec<usize>,
}

impl StepPropagators {
    pub(crate) fn new(a: &DenseMatrix, kind: TimeKind, times: &[f64]) -> Result<Self> {
        let mut gaps: Vec<f64> = Vec::new();
        let mut mats = Vec::new();
        let mut index = Vec::with_capacity(times.len());
        let mut prev = 0.0;
        for &t in times {
            let gap = t - prev;
            prev = t;
            let found = gaps
                .iter()
                .position(|&g| (g - gap).abs() <= 1e-12 * g.abs().max(gap.abs()));
            let i = match found {
                Some(i) => i,
                None => {
                    gaps.push(gap);
                    mats.push(propagator(a, kind, gap)?);
                    gaps.len() - 1
                }
            };
            index.push(i);
        }
        Ok(Self { mats, index })
    }

    /// Propagator from `t_{k-1}` to `t_k` (with `t_{-1} = 0`).
    pub(crate) fn step(&self, k: usize) -> &DenseMatrix {
        &self.mats[self.index[k]]
    }
}

/// 1D heat equation on the unit interval with homogeneous Dirichlet
/// boundaries and unit diffusivity, observed at the middle node.
pub fn build_heat_1d(d: usize) -> Result<LtiSystem> {
    build_heat_1d_with(d, 1.0)
}

/// [`build_heat_1d`] with diffusivity `kappa`: `A = kappa/h^2 tridiag(1, -2, 1)`, `h = 1/(d+1)`.
pub fn build_heat_1d_with(d: usize, kappa: f64) -> Result<LtiSystem> {
    if d < 2 {
        return Err(Error::Dimension(format!(
            "heat model needs d >= 2, got {d}"
        )));
    }
    if !(kappa > 0.0 && kappa.is_finite()) {
        return Err(Error::Config(format!(
            "diffusivity must be positive, got {kappa}"
        )));
    }
    let h = 1.0 / (d as f64 + 1.0);
    let s = kappa / (h * h);
    let a = DenseMatrix::from_fn(d, d, |i, j| {
        if i == j {
            -2.0 * s
        } else if i.abs_diff(j) == 1 {
            s
        } else {
            0.0
        }
    });
    let mut c = DenseMatrix::zeros(1, d);
    c[(0, d.div_ceil(2) - 1)] = 1.0;
    LtiSystem::continuous(a, c)
}

/// Finite-difference advection–diffusion `K_t = D K_zz - u K_z` on the unit
/// interval with no-flux boundaries, observed through the mean concentration.
///
/// Diffusion uses the central stencil with first-order one-sided boundary
/// rows; advection uses the forward (downwind) difference `-u (K_{i+1} - K_i)/h`,
/// truncated at the outflow boundary. Grid spacing is `1/d`.
pub fn build_advection_diffusion(d: usize, diffusion: f64, velocity: f64) -> Result<LtiSystem> {
    if d < 3 {
        return Err(Error::Dimension(format!(
            "advection-diffusion model needs d >= 3, got {d}"
        )));
    }
    if !(diffusion >= 0.0 && diffusion.is_finite() && velocity.is_finite()) {
        return Err(Error::Config(format!(
            "invalid advection-diffusion coefficients D = {diffusion}, u = {velocity}"
        )));
    }
    let h = 1.0 / d as f64;
    let diff = diffusion / (h * h);
    let adv = velocity / h;
    let mut a = DenseMatrix::zeros(d, d);
    for i in 0..d {
        a[(i, i)] -= 2.0 * diff;
        if i > 0 {
            a[(i, i - 1)] += diff;
        } else {
            a[(i, i)] += diff;
        }
        if i + 1 < d {
            a[(i, i + 1)] += diff;
        } else {
            a[(i, i)] += diff;
        }
        a[(i, i)] += adv;
        if i + 1 < d {
            a[(i, i + 1)] -= adv;
        }
    }
    let c = DenseMatrix::from_element(1, d, 1.0 / d as f64);
    LtiSystem::continuous(a, c)
}

/// Upper triangular band factor `R` with unit diagonal and random first and
/// second superdiagonals (standard deviations 0.5 and 0.25).
pub fn build_band_prior(d: usize, seed: u64) -> Result<SymFactor> {
    if d < 3 {
        return Err(Error::Dimension(format!(
            "band prior needs d >= 3, got {d}"
        )));
    }
    let mut stream = NormalStream::new(seed, STREAM_PRIOR);
    let mut r = DenseMatrix::identity(d, d);
    for i in 0..d - 1 {
        r[(i, i + 1)] = 0.5 * stream.sample();
    }
    for i in 0..d - 2 {
        r[(i, i + 2)] = 0.25 * stream.sample();
    }
    SymFactor::new(r)
}

/// Prior covariance solving `A Γ + Γ A^T = -B B^T` (Stein form for discrete time).
pub fn prior_from_lyapunov(system: &LtiSystem, b: &DenseMatrix) -> Result<SymFactor> {
    if b.nrows() != system.state_dim() {
        return Err(Error::Dimension(format!(
            "B has {} rows but the state dimension is {}",
            b.nrows(),
            system.state_dim()
        )));
    }
    system.check_stable()?;
    let bb = b * b.transpose();
    let gamma = match system.kind() {
        TimeKind::Continuous => solve_continuous_lyapunov(system.a(), &bb)?,
        TimeKind::Discrete => solve_discrete_lyapunov(system.a(), &bb)?,
    };
    let factor = cholesky_psd(&gamma, DEFAULT_CLIP_TOL)?;
    if !factor.is_square() {
        return Err(Error::Degenerate(format!(
            "Lyapunov prior has rank {} < {}",
            factor.rank(),
            factor.dim()
        )));
    }
    Ok(factor)
}

/// One Bayesian initial-condition inference problem.
#[derive(Debug, Clone)]
pub struct InferenceSetup {
    system: LtiSystem,
    prior: SymFactor,
    noise_cov: DenseMatrix,
    noise_chol: DenseMatrix,
    times: Vec<f64>,
}

impl InferenceSetup {
    /// Validates the prior factor (square, nonsingular), the noise covariance
    /// (SPD) and the time grid (strictly increasing; positive for continuous
    /// time, non-negative integers for discrete time). An empty grid is
    /// accepted and means no data.
    pub fn new(
        system: LtiSystem,
        prior: SymFactor,
        noise_cov: DenseMatrix,
        times: Vec<f64>,
    ) -> Result<Self> {
        let d = system.state_dim();
        if prior.dim() != d || !prior.is_square() {
            return Err(Error::Dimension(format!(
                "prior factor must be {d}x{d}, got {}x{}",
                prior.dim(),
                prior.rank()
            )));
        }
        let pivots = prior.base().clone().lu().u().diagonal().abs();
        if d > 0 && pivots.min() <= 1e-14 * pivots.max() {
            return Err(Error::Definiteness("prior covariance is singular".into()));
        }
        let p = system.output_dim();
        if noise_cov.nrows() != p || noise_cov.ncols() != p {
            return Err(Error::Dimension(format!(
                "noise covariance must be {p}x{p}, got {}x{}",
                noise_cov.nrows(),
                noise_cov.ncols()
            )));
        }
        ensure_finite(&noise_cov, "noise covariance")?;
        if (&noise_cov - noise_cov.transpose()).norm() > 1e-12 * noise_cov.norm() {
            return Err(Error::Definiteness(
                "noise covariance is not symmetric".into(),
            ));
        }
        let noise_chol = Cholesky::new(noise_cov.clone())
            .ok_or_else(|| Error::Definiteness("noise covariance is not positive definite".into()))?
            .unpack();
        for w in times.windows(2) {
            if !(w[1] > w[0]) {
                return Err(Error::Config(format!(
                    "measurement times must be strictly increasing ({} then {})",
                    w[0], w[1]
                )));
            }
        }
        if let Some(&t0) = times.first() {
            match system.kind() {
                TimeKind::Continuous if !(t0 > 0.0) => {
                    return Err(Error::Config(format!(
                        "measurement times must be positive, got {t0}"
                    )));
                }
                TimeKind::Discrete => {
                    for &t in &times {
                        integer_steps(t)?;
                    }
                }
                _ => {}
            }
        }
        if times.iter().any(|t| !t.is_finite()) {
            return Err(Error::NonFinite("measurement times"));
        }
        Ok(Self {
            system,
            prior,
            noise_cov,
            noise_chol,
            times,
        })
    }

    pub fn system(&self) -> &LtiSystem {
        &self.system
    }

    pub fn prior(&self) -> &SymFactor {
        &self.prior
    }

    pub fn noise_cov(&self) -> &DenseMatrix {
        &self.noise_cov
    }

    /// Lower Cholesky factor of the noise covariance.
    pub fn noise_chol(&self) -> &DenseMatrix {
        &self.noise_chol
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    /// Last measurement time (0 for an empty grid).
    pub fn end_time(&self) -> f64 {
        self.times.last().copied().unwrap_or(0.0)
    }

    pub fn n_times(&self) -> usize {
        self.times.len()
    }

    pub fn state_dim(&self) -> usize {
        self.system.state_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.system.output_dim()
    }

    /// Same problem with a different prior.
    pub fn with_prior(&self, prior: SymFactor) -> Result<Self> {
        Self::new(
            self.system.clone(),
            prior,
            self.noise_cov.clone(),
            self.times.clone(),
        )
    }

    /// Whiten data-space vectors in place: block `k` becomes `L_ε^{-1} v_k`.
    pub(crate) fn whiten_blocks(&self, v: &mut DenseMatrix) {
        let p = self.output_dim();
        for k in 0..v.nrows() / p {
            let mut block = v.rows_mut(k * p, p);
            self.noise_chol.solve_lower_triangular_mut(&mut block);
        }
    }
}

/// Equispaced grid `t_k = k h`, `k = 1..=t_e/h`; `t_e` must be a multiple of `h`.
pub fn uniform_times(h: f64, t_e: f64) -> Result<Vec<f64>> {
    if !(h > 0.0 && t_e > 0.0) {
        return Err(Error::Config(format!(
            "step and end time must be positive (h = {h}, t_e = {t_e})"
        )));
    }
    let ratio = t_e / h;
    let n = ratio.round();
    if (ratio - n).abs() > 1e-12 * n.max(1.0) || n < 1.0 {
        return Err(Error::Config(format!(
            "end time {t_e} is not an integer multiple of the step {h}"
        )));
    }
    let n = n as usize;
    Ok((1..=n).map(|k| t_e * k as f64 / n as f64).collect())
}

/// Stacked measurements `m_k = C e^{A t_k} x_0 + ε_k`, with the drawn truth.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementSet {
    pub values: DVector<f64>,
    pub output_dim: usize,
    pub seed: u64,
    pub truth: DVector<f64>,
}

impl MeasurementSet {
    pub fn n_times(&self) -> usize {
        self.values.len() / self.output_dim.max(1)
    }

    pub fn block(&self, k: usize) -> nalgebra::DVectorView<'_, f64> {
        self.values.rows(k * self.output_dim, self.output_dim)
    }

    /// Measurement values as an `(n d_out) x 1` matrix.
    pub fn as_column(&self) -> DenseMatrix {
        DenseMatrix::from_column_slice(self.values.len(), 1, self.values.as_slice())
    }
}

/// Draw `x_0 = S z` and noisy measurements from the seeded stream.
pub fn generate_measurements(setup: &InferenceSetup, seed: u64) -> Result<MeasurementSet> {
    let forward = crate::inference::forward_map(setup)?;
    Ok(generate_with_forward(setup, &forward, seed))
}

/// [`generate_measurements`] with a precomputed forward map.
pub fn generate_with_forward(
    setup: &InferenceSetup,
    forward: &ForwardMap,
    seed: u64,
) -> MeasurementSet {
    let mut stream = NormalStream::new(seed, STREAM_MEASUREMENTS);
    let z = stream.vector(setup.state_dim());
    let truth = setup.prior().base() * z;
    let noise = stream.vector(forward.stacked().nrows());
    measurements_from(setup, forward, truth, &noise, seed)
}

/// Measurements for a given truth and standard-normal noise draws.
pub fn measurements_from(
    setup: &InferenceSetup,
    forward: &ForwardMap,
    truth: DVector<f64>,
    std_noise: &DVector<f64>,
    seed: u64,
) -> MeasurementSet {
    let p = setup.output_dim();
    let mut values = forward.stacked() * &truth;
    for k in 0..forward.n_times() {
        let eps = setup.noise_chol() * std_noise.rows(k * p, p);
        let mut block = values.rows_mut(k * p, p);
        block += eps;
    }
    MeasurementSet {
        values,
        output_dim: p,
        seed,
        truth,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn heat_two_nodes() {
        let sys = build_heat_1d(2).unwrap();
        let want = DenseMatrix::from_row_slice(2, 2, &[-18.0, 9.0, 9.0, -18.0]);
        assert!((sys.a() - want).norm() < 1e-12);
        assert_eq!(sys.kind(), TimeKind::Continuous);
    }

    #[test]
    fn heat_observation_is_midpoint() {
        let sys = build_heat_1d(200).unwrap();
        let nz: Vec<(usize, f64)> = sys
            .c()
            .iter()
            .enumerate()
            .filter(|(_, &v)| v != 0.0)
            .map(|(i, &v)| (i, v))
            .collect();
        assert_eq!(nz, vec![(99, 1.0)]);
        assert!(build_heat_1d(1).is_err());
    }

    #[test]
    fn advection_diffusion_examples() {
        let sys = build_advection_diffusion(200, 0.02, 0.01).unwrap();
        assert_eq!(crate::rng::compensated_sum(sys.c().iter().copied()), 1.0);
        let zero = build_advection_diffusion(3, 0.0, 0.0).unwrap();
        assert_eq!(zero.a(), &DenseMatrix::zeros(3, 3));
    }

    #[test]
    fn band_prior_structure() {
        let r = build_band_prior(10, 5).unwrap();
        let b = r.base();
        for i in 0..10 {
            assert_eq!(b[(i, i)], 1.0);
            for j in 0..10 {
                if j < i || j > i + 2 {
                    assert_eq!(b[(i, j)], 0.0);
                }
            }
        }
        assert_eq!(r, build_band_prior(10, 5).unwrap());
        assert_ne!(r, build_band_prior(10, 6).unwrap());
    }

    #[test]
    fn lyapunov_prior_examples() {
        let sys = LtiSystem::continuous(
            DenseMatrix::from_element(1, 1, -1.0),
            DenseMatrix::from_element(1, 1, 1.0),
        )
        .unwrap();
        let p = prior_from_lyapunov(&sys, &DenseMatrix::identity(1, 1)).unwrap();
        assert!((p.gram()[(0, 0)] - 0.5).abs() < 1e-15);

        let a = DenseMatrix::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, -2.0]);
        let sys = LtiSystem::continuous(a, DenseMatrix::from_row_slice(1, 2, &[1.0, 0.0])).unwrap();
        let g = prior_from_lyapunov(&sys, &DenseMatrix::identity(2, 2))
            .unwrap()
            .gram();
        assert!((g[(0, 0)] - 0.5).abs() < 1e-15 && (g[(1, 1)] - 0.25).abs() < 1e-15);

        let unstable = LtiSystem::continuous(
            DenseMatrix::from_element(1, 1, 1.0),
            DenseMatrix::from_element(1, 1, 1.0),
        )
        .unwrap();
        assert!(matches!(
            prior_from_lyapunov(&unstable, &DenseMatrix::identity(1, 1)),
            Err(Error::Stability(_))
        ));
    }

    #[test]
    fn uniform_grid() {
        let t = uniform_times(0.005, 10.0).unwrap();
        assert_eq!(t.len(), 2000);
        assert_eq!(*t.last().unwrap(), 10.0);
        assert!(uniform_times(0.3, 1.0).is_err());
    }

    #[test]
    fn dimension_checks() {
        let a = DenseMatrix::zeros(2, 2);
        assert!(LtiSystem::continuous(a.clone(), DenseMatrix::zeros(1, 3)).is_err());
        assert!(LtiSystem::new(
            a,
            Some(DenseMatrix::zeros(3, 1)),
            DenseMatrix::zeros(1, 2),
            TimeKind::Continuous
        )
        .is_err());
    }
}
