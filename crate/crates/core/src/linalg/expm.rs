use crate::error::{Error, Result};

use super::{ensure_finite, ensure_square, DenseMatrix};

// Padé degrees and the 1-norm bounds below which each one is accurate to
// unit roundoff (Higham 2005).
const THETA: [(usize, f64); 4] = [
    (3, 1.495585217958292e-2),
    (5, 2.53939833006323e-1),
    (7, 9.504178996162932e-1),
    (9, 2.097847961257068e0),
];
const THETA_13: f64 = 5.371920351148152;

const B3: [f64; 4] = [120.0, 60.0, 12.0, 1.0];
const B5: [f64; 6] = [30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0];
const B7: [f64; 8] = [
    17297280.0, 8648640.0, 1995840.0, 277200.0, 25200.0, 1512.0, 56.0, 1.0,
];
const B9: [f64; 10] = [
    17643225600.0,
    8821612800.0,
    2075673600.0,
    302702400.0,
    30270240.0,
    2162160.0,
    110880.0,
    3960.0,
    90.0,
    1.0,
];
const B13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];

/// Matrix exponential `e^{A t}` by scaling and squaring with a diagonal Padé approximant.
pub fn expm(a: &DenseMatrix, t: f64) -> Result<DenseMatrix> {
    ensure_square(a, "A")?;
    ensure_finite(a, "A")?;
    if !t.is_finite() {
        return Err(Error::NonFinite("t"));
    }
    let n = a.nrows();
    let at = a * t;
    let norm = norm1(&at);
    if n == 0 || norm == 0.0 {
        return Ok(DenseMatrix::identity(n, n));
    }

    for &(m, theta) in &THETA {
        if norm <= theta {
            let coeffs: &[f64] = match m {
                3 => &B3,
                5 => &B5,
                7 => &B7,
                _ => &B9,
            };
            return pade_low(&at, coeffs);
        }
    }

    let s = ((norm / THETA_13).log2().ceil()).max(0.0) as i32;
    let scaled = at * 2f64.powi(-s);
    let mut r = pade13(&scaled)?;
    for _ in 0..s {
        r = &r * &r;
    }
    Ok(r)
}

fn norm1(a: &DenseMatrix) -> f64 {
    a.column_iter()
        .map(|c| c.iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

fn pade_low(a: &DenseMatrix, b: &[f64]) -> Result<DenseMatrix> {
    let n = a.nrows();
    let ident = DenseMatrix::identity(n, n);
    let a2 = a * a;
    // Even powers A^0, A^2, A^4, ...
    let mut pows = vec![ident.clone(), a2.clone()];
    while 2 * pows.len() < b.len() {
        let next = pows.last().unwrap() * &a2;
        pows.push(next);
    }
    let mut u = DenseMatrix::zeros(n, n);
    let mut v = DenseMatrix::zeros(n, n);
    for (k, p) in pows.iter().enumerate() {
        if 2 * k + 1 < b.len() {
            u += p * b[2 * k + 1];
        }
        v += p * b[2 * k];
    }
    let u = a * u;
    solve_pade(&u, &v)
}

fn pade13(a: &DenseMatrix) -> Result<DenseMatrix> {
    let n = a.nrows();
    let ident = DenseMatrix::identity(n, n);
    let a2 = a * a;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;
    let b = &B13;

    let u_inner = &a6 * (&a6 * b[13] + &a4 * b[11] + &a2 * b[9])
        + &a6 * b[7]
        + &a4 * b[5]
        + &a2 * b[3]
        + &ident * b[1];
    let u = a * u_inner;
    let v = &a6 * (&a6 * b[12] + &a4 * b[10] + &a2 * b[8])
        + &a6 * b[6]
        + &a4 * b[4]
        + &a2 * b[2]
        + &ident * b[0];
    solve_pade(&u, &v)
}

fn solve_pade(u: &DenseMatrix, v: &DenseMatrix) -> Result<DenseMatrix> {
    let lhs = v - u;
    let rhs = v + u;
    lhs.lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Degenerate("singular Padé denominator in expm".into()))
}
