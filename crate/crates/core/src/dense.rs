//! Dense helpers: matrix exponential, norms, Cholesky factors.

use faer::linalg::solvers::Solve;
use faer::{Mat, MatRef, Scale, Side};

use crate::error::LinalgError;

const PADE3: [f64; 4] = [120.0, 60.0, 12.0, 1.0];
const PADE5: [f64; 6] = [30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0];
const PADE7: [f64; 8] = [
    17297280.0, 8648640.0, 1995840.0, 277200.0, 25200.0, 1512.0, 56.0, 1.0,
];
const PADE9: [f64; 10] = [
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
const PADE13: [f64; 14] = [
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
// 1-norm thresholds for the degree 3, 5, 7, 9, 13 approximants (Higham 2005)
const THETA: [f64; 5] = [
    1.495585217958292e-2,
    2.539_398_330_063_23e-1,
    9.504178996162932e-1,
    2.097847961257068,
    5.371920351148152,
];

pub fn norm_one(a: MatRef<'_, f64>) -> f64 {
    (0..a.ncols())
        .map(|j| (0..a.nrows()).map(|i| a[(i, j)].abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

fn lin_comb(terms: &[(f64, &Mat<f64>)], n: usize) -> Mat<f64> {
    Mat::from_fn(n, n, |i, j| terms.iter().map(|(c, m)| c * m[(i, j)]).sum())
}

/// Matrix exponential by scaling and squaring with diagonal Padé approximants.
pub fn expm(a: MatRef<'_, f64>) -> Mat<f64> {
    let n = a.nrows();
    assert_eq!(n, a.ncols());
    let id = Mat::<f64>::identity(n, n);
    let norm = norm_one(a);
    let (u, v, squarings) = if norm <= THETA[3] {
        let b: &[f64] = if norm <= THETA[0] {
            &PADE3
        } else if norm <= THETA[1] {
            &PADE5
        } else if norm <= THETA[2] {
            &PADE7
        } else {
            &PADE9
        };
        let a = a.to_owned();
        let a2 = &a * &a;
        let mut pow = id.clone();
        let mut u_inner = Mat::<f64>::zeros(n, n);
        let mut v = Mat::<f64>::zeros(n, n);
        for k in 0..b.len() / 2 {
            v = lin_comb(&[(1.0, &v), (b[2 * k], &pow)], n);
            u_inner = lin_comb(&[(1.0, &u_inner), (b[2 * k + 1], &pow)], n);
            pow = &pow * &a2;
        }
        (&a * &u_inner, v, 0)
    } else {
        let s = ((norm / THETA[4]).log2().ceil()).max(0.0) as u32;
        let a = Scale(0.5f64.powi(s as i32)) * a.to_owned();
        let b = &PADE13;
        let a2 = &a * &a;
        let a4 = &a2 * &a2;
        let a6 = &a4 * &a2;
        let u1 = lin_comb(&[(b[13], &a6), (b[11], &a4), (b[9], &a2)], n);
        let u2 = lin_comb(&[(b[7], &a6), (b[5], &a4), (b[3], &a2), (b[1], &id)], n);
        let u = &a * &(&a6 * &u1 + u2);
        let v1 = lin_comb(&[(b[12], &a6), (b[10], &a4), (b[8], &a2)], n);
        let v2 = lin_comb(&[(b[6], &a6), (b[4], &a4), (b[2], &a2), (b[0], &id)], n);
        let v = &a6 * &v1 + v2;
        (u, v, s)
    };
    let p = &v + &u;
    let q = &v - &u;
    let mut r = q.partial_piv_lu().solve(&p);
    for _ in 0..squarings {
        r = &r * &r;
    }
    r
}

/// Largest singular value.
pub fn spectral_norm(a: MatRef<'_, f64>) -> Result<f64, LinalgError> {
    let s = a
        .singular_values()
        .map_err(|e| LinalgError::NoConvergence(format!("{e:?}")))?;
    Ok(s.first().copied().unwrap_or(0.0))
}

/// Lower Cholesky factor `L` with `A = L Lᵀ`.
pub fn cholesky_lower(a: MatRef<'_, f64>) -> Result<Mat<f64>, LinalgError> {
    let llt = a
        .llt(Side::Lower)
        .map_err(|e| LinalgError::Factorization(format!("{e:?}")))?;
    Ok(llt.L().to_owned())
}

/// Solves `L X = B` for lower triangular `L`.
pub fn solve_lower(l: MatRef<'_, f64>, b: MatRef<'_, f64>) -> Mat<f64> {
    let mut x = b.to_owned();
    l.solve_lower_triangular_in_place(&mut x);
    x
}

pub fn max_abs_diff(a: MatRef<'_, f64>, b: MatRef<'_, f64>) -> f64 {
    let mut m = 0.0f64;
    for j in 0..a.ncols() {
        for i in 0..a.nrows() {
            m = m.max((a[(i, j)] - b[(i, j)]).abs());
        }
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exp_of_diagonal() {
        for scale in [1e-3, 0.2, 0.8, 2.0, 40.0] {
            let a = Mat::from_fn(3, 3, |i, j| {
                if i == j {
                    -(i as f64 + 1.0) * scale
                } else {
                    0.0
                }
            });
            let e = expm(a.as_ref());
            // scaling and squaring is accurate relative to the norm of the result
            let top = (-scale).exp();
            for i in 0..3 {
                let want = (-(i as f64 + 1.0) * scale).exp();
                assert!((e[(i, i)] - want).abs() <= 1e-14 * top, "{scale}");
            }
        }
    }

    #[test]
    fn exp_of_rotation_generator() {
        let t = 7.3;
        let a = Mat::from_fn(2, 2, |i, j| match (i, j) {
            (0, 1) => -t,
            (1, 0) => t,
            _ => 0.0,
        });
        let e = expm(a.as_ref());
        assert!((e[(0, 0)] - t.cos()).abs() < 1e-13);
        assert!((e[(1, 0)] - t.sin()).abs() < 1e-13);
    }

    #[test]
    fn exp_of_jordan_block() {
        // exp([[l, 1], [0, l]]) = e^l [[1, 1], [0, 1]]
        let l = -3.0;
        let a = Mat::from_fn(2, 2, |i, j| {
            if i == j {
                l
            } else if j > i {
                1.0
            } else {
                0.0
            }
        });
        let e = expm(a.as_ref());
        assert!((e[(0, 1)] - l.exp()).abs() < 1e-14);
        assert!(e[(1, 0)].abs() < 1e-16);
    }

    #[test]
    fn cholesky_roundtrip() {
        let a = Mat::from_fn(3, 3, |i, j| if i == j { 4.0 } else { 1.0 });
        let l = cholesky_lower(a.as_ref()).unwrap();
        let b = &l * l.transpose();
        assert!(max_abs_diff(a.as_ref(), b.as_ref()) < 1e-14);
    }
}
