mod common;

use balred::linalg::{
    cholesky_psd, expm, rel_frobenius, solve_continuous_lyapunov, solve_discrete_lyapunov, svd,
    sym_generalized_eig, DenseMatrix, SymFactor, DEFAULT_CLIP_TOL,
};
use common::{diag, rng, scalar, spd, spd_factor, stable, uniform};
use proptest::prelude::*;

#[test]
fn expm_examples() {
    assert_eq!(expm(&scalar(0.0), 5.0).unwrap(), scalar(1.0));
    let e = expm(&scalar(-1.0), 1.0).unwrap()[(0, 0)];
    assert!((e - 0.36787944117144233).abs() < 1e-16);
    let got = expm(&diag(&[-1.0, -2.0]), 0.5).unwrap();
    let want = diag(&[(-0.5f64).exp(), (-1.0f64).exp()]);
    assert!((got - want).amax() < 1e-12);
}

#[test]
fn lyapunov_examples() {
    let x = solve_continuous_lyapunov(&scalar(-1.0), &scalar(1.0)).unwrap();
    assert!((x[(0, 0)] - 0.5).abs() < 1e-14);
    let x = solve_continuous_lyapunov(&diag(&[-1.0, -3.0]), &DenseMatrix::identity(2, 2)).unwrap();
    assert!((x - diag(&[0.5, 1.0 / 6.0])).amax() < 1e-14);
    // unstable, only the spectrum condition matters
    let x = solve_continuous_lyapunov(&scalar(2.0), &scalar(-4.0)).unwrap();
    assert!((x[(0, 0)] - 1.0).abs() < 1e-14);

    let x = solve_discrete_lyapunov(&scalar(0.0), &scalar(3.0)).unwrap();
    assert!((x[(0, 0)] - 3.0).abs() < 1e-14);
    let x = solve_discrete_lyapunov(&scalar(0.5), &scalar(1.0)).unwrap();
    assert!((x[(0, 0)] - 4.0 / 3.0).abs() < 1e-14);
    let x = solve_discrete_lyapunov(&diag(&[0.5, 0.2]), &DenseMatrix::identity(2, 2)).unwrap();
    assert!((x - diag(&[4.0 / 3.0, 25.0 / 24.0])).amax() < 1e-14);
}

#[test]
fn lyapunov_rejects_singular_pencil() {
    // eigenvalues 1 and -1 sum to zero
    assert!(solve_continuous_lyapunov(&diag(&[1.0, -1.0]), &DenseMatrix::identity(2, 2)).is_err());
    // eigenvalue 1 squared is one
    assert!(solve_discrete_lyapunov(&scalar(1.0), &scalar(1.0)).is_err());
}

#[test]
fn psd_factor_examples() {
    let f = cholesky_psd(&DenseMatrix::identity(3, 3), DEFAULT_CLIP_TOL).unwrap();
    assert!((f.gram() - DenseMatrix::identity(3, 3)).amax() < 1e-15);
    let f = cholesky_psd(&scalar(4.0), DEFAULT_CLIP_TOL).unwrap();
    assert!((f.base()[(0, 0)].abs() - 2.0).abs() < 1e-15);
    let ones = DenseMatrix::from_element(2, 2, 1.0);
    let f = cholesky_psd(&ones, DEFAULT_CLIP_TOL).unwrap();
    assert_eq!(f.rank(), 1);
    assert!((f.gram() - ones).amax() < 1e-12);
    assert!(cholesky_psd(&diag(&[1.0, -1.0]), DEFAULT_CLIP_TOL).is_err());
}

#[test]
fn generalized_eig_examples() {
    let i2 = SymFactor::identity(2);
    let e = sym_generalized_eig(&DenseMatrix::identity(2, 2), &i2).unwrap();
    assert_eq!(e.values.len(), 2);
    assert!(e.values.iter().all(|v| (v - 1.0).abs() < 1e-15));
    let e = sym_generalized_eig(&diag(&[4.0, 1.0]), &i2).unwrap();
    assert!((e.values[0] - 4.0).abs() < 1e-14 && (e.values[1] - 1.0).abs() < 1e-14);
    assert!((e.vectors.column(0)[0].abs() - 1.0).abs() < 1e-14);
    // N = diag(4, 1) has factor diag(2, 1)
    let n = SymFactor::new(diag(&[2.0, 1.0])).unwrap();
    let e = sym_generalized_eig(&diag(&[2.0, 3.0]), &n).unwrap();
    assert!((e.values[0] - 3.0).abs() < 1e-14 && (e.values[1] - 0.5).abs() < 1e-14);
}

#[test]
fn svd_examples() {
    assert_eq!(svd(&DenseMatrix::identity(2, 2)).unwrap().s, vec![1.0, 1.0]);
    let s = svd(&diag(&[3.0, 0.0])).unwrap().s;
    assert!((s[0] - 3.0).abs() < 1e-15 && s[1].abs() < 1e-15);
    let m = DenseMatrix::from_row_slice(2, 2, &[0.0, 2.0, 1.0, 0.0]);
    let s = svd(&m).unwrap().s;
    assert!((s[0] - 2.0).abs() < 1e-14 && (s[1] - 1.0).abs() < 1e-14);
}

fn vec_of(m: &DenseMatrix) -> DenseMatrix {
    DenseMatrix::from_column_slice(m.len(), 1, m.as_slice())
}

fn unvec(v: &DenseMatrix, n: usize) -> DenseMatrix {
    DenseMatrix::from_column_slice(n, n, v.as_slice())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn continuous_lyapunov_matches_kronecker(n in 1usize..=8, seed in any::<u64>()) {
        let mut r = rng(seed);
        let a = stable(&mut r, n);
        let w = spd(&mut r, n);
        let x = solve_continuous_lyapunov(&a, &w).unwrap();
        let i = DenseMatrix::identity(n, n);
        let op = i.kronecker(&a) + a.kronecker(&i);
        let oracle = unvec(&op.lu().solve(&(-vec_of(&w))).unwrap(), n);
        prop_assert!(rel_frobenius(&x, &oracle) < 1e-8);
    }

    #[test]
    fn discrete_lyapunov_matches_kronecker(n in 1usize..=8, seed in any::<u64>()) {
        let mut r = rng(seed);
        let m = uniform(&mut r, n, n);
        let a = &m / (m.norm() + 0.5);
        let w = spd(&mut r, n);
        let x = solve_discrete_lyapunov(&a, &w).unwrap();
        let op = DenseMatrix::identity(n * n, n * n) - a.kronecker(&a);
        let oracle = unvec(&op.lu().solve(&vec_of(&w)).unwrap(), n);
        prop_assert!(rel_frobenius(&x, &oracle) < 1e-8);
    }

    #[test]
    fn expm_semigroup(n in 1usize..=10, seed in any::<u64>(), s in 0.0f64..2.0, t in 0.0f64..2.0) {
        let mut r = rng(seed);
        let a = stable(&mut r, n);
        let whole = expm(&a, s + t).unwrap();
        let split = expm(&a, s).unwrap() * expm(&a, t).unwrap();
        prop_assert!(rel_frobenius(&split, &whole) < 1e-10);
    }

    #[test]
    fn generalized_eig_trace(n in 1usize..=8, seed in any::<u64>()) {
        let mut r = rng(seed);
        let m = spd(&mut r, n);
        let l = spd_factor(&mut r, n);
        let e = sym_generalized_eig(&m, &SymFactor::new(l.clone()).unwrap()).unwrap();
        let nmat = &l * l.transpose();
        let want = nmat.lu().solve(&m).unwrap().trace();
        let got: f64 = e.values.iter().sum();
        prop_assert!((got - want).abs() <= 1e-10 * want.abs());
    }

    #[test]
    fn psd_factor_reproduces_gram(n in 1usize..=8, k in 1usize..=8, seed in any::<u64>()) {
        let k = k.min(n);
        let mut r = rng(seed);
        let f = uniform(&mut r, n, k);
        let m = &f * f.transpose();
        let g = cholesky_psd(&m, DEFAULT_CLIP_TOL).unwrap().gram();
        prop_assert!(rel_frobenius(&g, &m) < 1e-12);
    }
}
