//! Matrix exponential by scaling and squaring with diagonal Padé approximants
//! of degree 3, 5, 7, 9 or 13 (Higham 2005).

use crate::{Error, Mat16, Result};

const THETA: [(usize, f64); 5] = [
    (3, 1.495_585_217_958_292e-2),
    (5, 2.539_398_330_063_230e-1),
    (7, 9.504_178_996_162_932e-1),
    (9, 2.097_847_961_257_068e0),
    (13, 5.371_920_351_148_152e0),
];

const B3: [f64; 4] = [120.0, 60.0, 12.0, 1.0];
const B5: [f64; 6] = [30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0];
const B7: [f64; 8] = [17297280.0, 8648640.0, 1995840.0, 277200.0, 25200.0, 1512.0, 56.0, 1.0];
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

fn one_norm(m: &Mat16) -> f64 {
    m.column_iter()
        .map(|col| col.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Numerator/denominator pieces `(U, V)` of the degree-`m` approximant, so that
/// `r_m(A) = (V − U)⁻¹ (V + U)`.
fn pade_low(a: &Mat16, b: &[f64]) -> (Mat16, Mat16) {
    let id = Mat16::identity();
    let a2 = a * a;
    let mut power = id;
    let mut u_inner = id * b[1];
    let mut v = id * b[0];
    let mut k = 2;
    while k < b.len() {
        power *= a2;
        v += power * b[k];
        if k + 1 < b.len() {
            u_inner += power * b[k + 1];
        }
        k += 2;
    }
    (a * u_inner, v)
}

fn pade13(a: &Mat16) -> (Mat16, Mat16) {
    let b = &B13;
    let id = Mat16::identity();
    let a2 = a * a;
    let a4 = a2 * a2;
    let a6 = a2 * a4;
    let u_inner = a6 * (a6 * b[13] + a4 * b[11] + a2 * b[9]) + a6 * b[7] + a4 * b[5] + a2 * b[3] + id * b[1];
    let v = a6 * (a6 * b[12] + a4 * b[10] + a2 * b[8]) + a6 * b[6] + a4 * b[4] + a2 * b[2] + id * b[0];
    (a * u_inner, v)
}

fn solve(u: &Mat16, v: &Mat16) -> Result<Mat16> {
    let p = v + u;
    let q = v - u;
    q.lu().solve(&p).ok_or(Error::NonFiniteMatrix)
}

/// `exp(M)` for a real 16×16 matrix. Rejects non-finite input.
pub fn matrix_exp(m: &Mat16) -> Result<Mat16> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteMatrix);
    }
    let norm = one_norm(m);
    for &(deg, theta) in &THETA[..4] {
        if norm <= theta {
            let (u, v) = match deg {
                3 => pade_low(m, &B3),
                5 => pade_low(m, &B5),
                7 => pade_low(m, &B7),
                _ => pade_low(m, &B9),
            };
            return solve(&u, &v);
        }
    }
    let theta13 = THETA[4].1;
    let squarings = if norm > theta13 {
        (norm / theta13).log2().ceil().max(0.0) as i32
    } else {
        0
    };
    let scaled = m * 2f64.powi(-squarings);
    let (u, v) = pade13(&scaled);
    let mut r = solve(&u, &v)?;
    for _ in 0..squarings {
        r = r * r;
    }
    if r.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteMatrix);
    }
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Vec16;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn taylor(m: &Mat16, terms: usize) -> Mat16 {
        let mut sum = Mat16::identity();
        let mut term = Mat16::identity();
        for k in 1..terms {
            term = term * m / k as f64;
            sum += term;
        }
        sum
    }

    fn random(rng: &mut ChaCha8Rng, scale: f64) -> Mat16 {
        Mat16::from_fn(|_, _| rng.random_range(-1.0..1.0)) * scale
    }

    #[test]
    fn zero_gives_identity() {
        assert_eq!(matrix_exp(&Mat16::zeros()).unwrap(), Mat16::identity());
    }

    #[test]
    fn diagonal_input() {
        let d = Vec16::from_fn(|i, _| i as f64 * 0.7 - 4.0);
        let e = matrix_exp(&Mat16::from_diagonal(&d)).unwrap();
        for i in 0..16 {
            for j in 0..16 {
                let expected = if i == j { d[i].exp() } else { 0.0 };
                assert!((e[(i, j)] - expected).abs() <= 1e-13 * expected.abs().max(1.0));
            }
        }
    }

    #[test]
    fn matches_taylor_series_on_small_norms() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let mut m = random(&mut rng, 1.0);
            let norm = one_norm(&m);
            m /= norm.max(1.0);
            let exact = taylor(&m, 50);
            let err = (matrix_exp(&m).unwrap() - exact).amax() / exact.amax();
            assert!(err < 1e-13, "err {err}");
        }
    }

    #[test]
    fn every_pade_degree_is_exercised() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let base = random(&mut rng, 1.0);
        let base = base / one_norm(&base);
        for target in [0.01, 0.2, 0.9, 2.0, 5.0] {
            let m = base * target;
            let exact = taylor(&m, 60);
            let err = (matrix_exp(&m).unwrap() - exact).amax() / exact.amax();
            assert!(err < 1e-13, "norm {target}: err {err}");
        }
    }

    #[test]
    fn large_norm_uses_squaring() {
        // exp(M) exp(-M) = I holds for a scaled skew-symmetric generator
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let r = random(&mut rng, 1.0);
        let skew = (r - r.transpose()) * 10.0;
        let e = matrix_exp(&skew).unwrap();
        assert!((e * e.transpose() - Mat16::identity()).amax() < 1e-12);
    }

    #[test]
    fn rejects_non_finite() {
        let mut m = Mat16::zeros();
        m[(2, 3)] = f64::NAN;
        assert!(matrix_exp(&m).is_err());
    }
}
