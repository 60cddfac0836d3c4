//! Matrix exponential, the integral of the exponential, and eigenvalue
//! helpers for small dense matrices.

use nalgebra::{Complex, DMatrix};

use crate::error::{Error, Result};

/// Padé(13) coefficients for scaling and squaring (Higham 2005).
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
const THETA13: f64 = 5.371920351148152;

fn check_finite(a: &DMatrix<f64>, context: &'static str) -> Result<()> {
    if a.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFiniteValue { context })
    }
}

fn one_norm(a: &DMatrix<f64>) -> f64 {
    a.column_iter()
        .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// `exp(A)` by scaling and squaring around a degree-13 Padé approximant.
pub fn matrix_exp(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    assert!(a.is_square(), "matrix_exp needs a square matrix");
    check_finite(a, "matrix_exp input")?;
    let n = a.nrows();
    if n == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    let norm = one_norm(a);
    let squarings = if norm > THETA13 {
        (norm / THETA13).log2().ceil().max(0.0) as i32
    } else {
        0
    };
    let a = a * 2f64.powi(-squarings);

    let b = &PADE13;
    let ident = DMatrix::<f64>::identity(n, n);
    let a2 = &a * &a;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;
    let inner_u = &a6 * (&a6 * b[13] + &a4 * b[11] + &a2 * b[9]);
    let u = &a * (inner_u + &a6 * b[7] + &a4 * b[5] + &a2 * b[3] + &ident * b[1]);
    let inner_v = &a6 * (&a6 * b[12] + &a4 * b[10] + &a2 * b[8]);
    let v = inner_v + &a6 * b[6] + &a4 * b[4] + &a2 * b[2] + &ident * b[0];

    let denom = &v - &u;
    let numer = &v + &u;
    let mut result = denom.lu().solve(&numer).ok_or(Error::NonFiniteValue {
        context: "matrix_exp Padé denominator",
    })?;
    for _ in 0..squarings {
        result = &result * &result;
    }
    check_finite(&result, "matrix_exp result")?;
    Ok(result)
}

/// `∫₀^T exp(A s) ds`, read off the top-right block of
/// `exp([[A, I], [0, 0]] T)`. Valid for singular `A`.
pub fn psi(a: &DMatrix<f64>, span: f64) -> Result<DMatrix<f64>> {
    assert!(a.is_square(), "psi needs a square matrix");
    if !span.is_finite() || span < 0.0 {
        return Err(Error::NonFiniteValue {
            context: "psi span",
        });
    }
    let n = a.nrows();
    let mut aug = DMatrix::<f64>::zeros(2 * n, 2 * n);
    aug.view_mut((0, 0), (n, n)).copy_from(&(a * span));
    aug.view_mut((0, n), (n, n))
        .copy_from(&(DMatrix::<f64>::identity(n, n) * span));
    let e = matrix_exp(&aug)?;
    Ok(e.view((0, n), (n, n)).into_owned())
}

/// Eigenvalues of a square matrix.
///
/// Orders up to three go through the characteristic polynomial; coefficients
/// below `1e-13 * |M|^k` are treated as zero so that nilpotent closed loops
/// report exact zeros instead of `sqrt(eps)` noise. Larger matrices use the
/// real Schur form.
pub fn eigenvalues(m: &DMatrix<f64>) -> Result<Vec<Complex<f64>>> {
    assert!(m.is_square(), "eigenvalues need a square matrix");
    check_finite(m, "eigenvalue input")?;
    let scale = m.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    let clamp = |c: f64, degree: i32| {
        if c.abs() <= 1e-13 * scale.powi(degree) {
            0.0
        } else {
            c
        }
    };
    let roots = match m.nrows() {
        0 => Vec::new(),
        1 => vec![Complex::new(m[(0, 0)], 0.0)],
        2 => {
            let tr = m[(0, 0)] + m[(1, 1)];
            let det = m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)];
            quadratic_roots(clamp(-tr, 1), clamp(det, 2)).to_vec()
        }
        3 => {
            let tr = m.trace();
            let minors = m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)] + m[(0, 0)] * m[(2, 2)]
                - m[(0, 2)] * m[(2, 0)]
                + m[(1, 1)] * m[(2, 2)]
                - m[(1, 2)] * m[(2, 1)];
            let det = m.determinant();
            cubic_roots(clamp(-tr, 1), clamp(minors, 2), clamp(-det, 3)).to_vec()
        }
        _ => m.clone().complex_eigenvalues().iter().copied().collect(),
    };
    if roots.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::NonFiniteValue {
            context: "eigenvalues",
        });
    }
    Ok(roots)
}

pub fn spectral_radius(m: &DMatrix<f64>) -> Result<f64> {
    Ok(eigenvalues(m)?.iter().map(|z| z.norm()).fold(0.0, f64::max))
}

/// Roots of `x² + b x + c`.
fn quadratic_roots(b: f64, c: f64) -> [Complex<f64>; 2] {
    let half = -0.5 * b;
    let disc = half * half - c;
    if disc >= 0.0 {
        // avoid cancellation: compute the larger root first
        let s = disc.sqrt();
        let big = if half >= 0.0 { half + s } else { half - s };
        let small = if big != 0.0 { c / big } else { 0.0 };
        [Complex::new(big, 0.0), Complex::new(small, 0.0)]
    } else {
        let s = (-disc).sqrt();
        [Complex::new(half, s), Complex::new(half, -s)]
    }
}

/// Roots of `x³ + a x² + b x + c`.
fn cubic_roots(a: f64, b: f64, c: f64) -> [Complex<f64>; 3] {
    let real = if c == 0.0 {
        0.0
    } else {
        let p = b - a * a / 3.0;
        let q = 2.0 * a * a * a / 27.0 - a * b / 3.0 + c;
        let disc = (q / 2.0).powi(2) + (p / 3.0).powi(3);
        let t = if disc >= 0.0 {
            let s = disc.sqrt();
            (-q / 2.0 + s).cbrt() + (-q / 2.0 - s).cbrt()
        } else {
            let r = (-p / 3.0).sqrt();
            let arg = (-q / (2.0 * r * r * r)).clamp(-1.0, 1.0);
            2.0 * r * (arg.acos() / 3.0).cos()
        };
        let mut x = t - a / 3.0;
        for _ in 0..4 {
            let f = ((x + a) * x + b) * x + c;
            let df = (3.0 * x + 2.0 * a) * x + b;
            if df == 0.0 {
                break;
            }
            let step = f / df;
            x -= step;
            if step.abs() <= 1e-16 * x.abs().max(1.0) {
                break;
            }
        }
        x
    };
    let b1 = a + real;
    let b0 = b + real * b1;
    let [r1, r2] = quadratic_roots(b1, b0);
    [Complex::new(real, 0.0), r1, r2]
}
