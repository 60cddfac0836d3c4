use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{matrix_exp, psi};
use crate::signals::InputHistory;

use super::{check_len, simpson};

const COMMUTE_TOL: f64 = 1e-12;

/// Fails with `NonCommuting` unless `AC = CA` entrywise within 1e-12.
pub fn check_commuting(a: &DMatrix<f64>, c: &DMatrix<f64>) -> Result<()> {
    let deviation = (a * c - c * a).abs().max();
    if deviation > COMMUTE_TOL || !deviation.is_finite() {
        return Err(Error::NonCommuting { deviation });
    }
    Ok(())
}

/// Predictor for `ẋ = A x + B u + u C x` with scalar `u` and `AC = CA`:
///
/// `exp(A d) exp(C ∫u) x + ∫_{-d}^0 exp(-A w) exp(C ∫_w^0 u) B u(w) dw`.
///
/// A held block of value `u` ending at distance `s` before the anchor, with
/// `W` the input integral after it, contributes
/// `exp(A s + C W) psi(A + u C, L) B u`.
pub fn bilinear_predict(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    c: &DMatrix<f64>,
    x: &[f64],
    hist: &InputHistory,
) -> Result<Vec<f64>> {
    let n = a.nrows();
    check_len(a.ncols(), n)?;
    check_len(c.nrows(), n)?;
    check_len(c.ncols(), n)?;
    check_len(b.nrows(), n)?;
    check_len(b.ncols(), 1)?;
    check_len(x.len(), n)?;
    check_len(hist.dim(), 1)?;
    check_commuting(a, c)?;

    let bcol: DVector<f64> = b.column(0).into_owned();
    let h = hist.h();
    let len = hist.len();
    let runs = hist.runs();
    let mut forced = DVector::<f64>::zeros(n);
    // input integral from the end of the current block to the anchor
    let mut after = 0.0;
    for run in runs.iter().rev() {
        let back = (len - run.first - run.count) as f64 * h;
        let seg = hist.segment(run.first);
        if run.constant {
            let u = seg.left[0];
            let span = run.count as f64 * h;
            if u != 0.0 {
                let lead = matrix_exp(&(a * back + c * after))?;
                forced += lead * psi(&(a + c * u), span)? * (&bcol * u);
            }
            after += u * span;
        } else {
            let (ul, um, ur) = (seg.left[0], seg.mid[0], seg.right[0]);
            // input integral from each quadrature point to the anchor
            let w_r = after;
            let w_m = after + h / 24.0 * (-ul + 8.0 * um + 5.0 * ur);
            let w_l = after + simpson(h, ul, um, ur);
            let g = |dist: f64, w: f64, u: f64| -> Result<DVector<f64>> {
                Ok(matrix_exp(&(a * dist + c * w))? * (&bcol * u))
            };
            let gl = g(back + h, w_l, ul)?;
            let gm = g(back + 0.5 * h, w_m, um)?;
            let gr = g(back, w_r, ur)?;
            for i in 0..n {
                forced[i] += simpson(h, gl[i], gm[i], gr[i]);
            }
            after = w_l;
        }
    }
    let free = matrix_exp(&(a * hist.duration() + c * after))? * DVector::from_column_slice(x);
    Ok((free + forced).as_slice().to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::predictors::lti_predict;

    fn m(rows: usize, data: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(rows, data.len() / rows, data)
    }

    #[test]
    fn zero_c_matches_lti() {
        let a = m(2, &[-0.5, 1.0, -1.0, -0.5]);
        let b = m(2, &[0.0, 1.0]);
        let values: Vec<[f64; 1]> = (0..800).map(|j| [((j / 100) as f64).sin()]).collect();
        let hist = InputHistory::from_values(1, 1e-3, &values);
        let x = [1.0, -2.0];
        let bil = bilinear_predict(&a, &b, &DMatrix::zeros(2, 2), &x, &hist).unwrap();
        let lin = lti_predict(&a, &b, &x, &hist).unwrap();
        for i in 0..2 {
            assert!((bil[i] - lin[i]).abs() <= 1e-14 * lin[i].abs().max(1.0));
        }
    }

    #[test]
    fn separable_scalar() {
        let (c0, d, x0) = (0.8, 1.25, 1.7);
        let hist = InputHistory::constant(&[c0], 1e-3, 1250);
        let x =
            bilinear_predict(&m(1, &[0.0]), &m(1, &[0.0]), &m(1, &[1.0]), &[x0], &hist).unwrap();
        assert!((x[0] - (c0 * d).exp() * x0).abs() < 1e-12);
    }

    #[test]
    fn rejects_non_commuting() {
        let a = m(2, &[0.0, 1.0, 0.0, 0.0]);
        let c = m(2, &[1.0, 0.0, 0.0, 2.0]);
        let hist = InputHistory::constant(&[1.0], 1e-3, 10);
        let err = bilinear_predict(&a, &m(2, &[0.0, 1.0]), &c, &[0.0, 0.0], &hist);
        assert!(matches!(err, Err(Error::NonCommuting { .. })));
    }
}
