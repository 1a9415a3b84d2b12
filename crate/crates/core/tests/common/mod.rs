//! Random fixtures shared by the integration tests.
#![allow(dead_code)]

use balred::linalg::{DenseMatrix, SymFactor};
use balred::models::{InferenceSetup, LtiSystem, MeasurementSet};
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DenseMatrix {
    DenseMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

pub fn vector(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0))
}

/// Well-conditioned invertible matrix `I + 0.3 M / sqrt(n)`.
pub fn invertible(rng: &mut ChaCha8Rng, n: usize) -> DenseMatrix {
    DenseMatrix::identity(n, n) + uniform(rng, n, n) * (0.3 / (n as f64).sqrt())
}

/// Stable matrix: shift a random matrix left of its Frobenius norm.
pub fn stable(rng: &mut ChaCha8Rng, n: usize) -> DenseMatrix {
    let m = uniform(rng, n, n);
    let shift = m.norm() + 0.2;
    m - DenseMatrix::identity(n, n) * shift
}

/// `Z D Z^{-1}` with eigenvalues in `[0.3, 1] ∪ [-2, -1.2]`, so that no two
/// eigenvalues sum to zero. At least one eigenvalue is positive.
pub fn unstable(rng: &mut ChaCha8Rng, n: usize) -> DenseMatrix {
    let z = invertible(rng, n);
    let diag = DVector::from_fn(n, |i, _| {
        if i == 0 || rng.random_bool(0.5) {
            rng.random_range(0.3..1.0)
        } else {
            rng.random_range(-2.0..-1.2)
        }
    });
    let z_inv = z.clone().try_inverse().expect("well-conditioned");
    z * DenseMatrix::from_diagonal(&diag) * z_inv
}

/// Lower triangular factor with diagonal in `[0.5, 1.5]`.
pub fn spd_factor(rng: &mut ChaCha8Rng, n: usize) -> DenseMatrix {
    DenseMatrix::from_fn(n, n, |i, j| {
        if i == j {
            rng.random_range(0.5..1.5)
        } else if i > j {
            rng.random_range(-0.5..0.5)
        } else {
            0.0
        }
    })
}

pub fn spd(rng: &mut ChaCha8Rng, n: usize) -> DenseMatrix {
    let l = spd_factor(rng, n);
    &l * l.transpose()
}

/// Random continuous inference problem with a non-identity prior and
/// correlated noise, measured at `n_times` equispaced times up to `t_e`.
pub fn random_setup(
    rng: &mut ChaCha8Rng,
    d: usize,
    p: usize,
    n_times: usize,
    t_e: f64,
    stable_a: bool,
) -> InferenceSetup {
    let a = if stable_a {
        stable(rng, d)
    } else {
        unstable(rng, d)
    };
    let c = uniform(rng, p, d);
    let sys = LtiSystem::continuous(a, c).unwrap();
    let prior = SymFactor::new(spd_factor(rng, d)).unwrap();
    let noise = spd(rng, p) * 0.05;
    let times = (1..=n_times)
        .map(|k| t_e * k as f64 / n_times as f64)
        .collect();
    InferenceSetup::new(sys, prior, noise, times).unwrap()
}

pub fn measurements(values: DVector<f64>, output_dim: usize, d: usize) -> MeasurementSet {
    MeasurementSet {
        values,
        output_dim,
        seed: 0,
        truth: DVector::zeros(d),
    }
}

pub fn scalar(v: f64) -> DenseMatrix {
    DenseMatrix::from_element(1, 1, v)
}

pub fn diag(v: &[f64]) -> DenseMatrix {
    DenseMatrix::from_diagonal(&DVector::from_column_slice(v))
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}
