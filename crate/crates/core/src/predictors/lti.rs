use nalgebra::{DMatrix, DVector};

use crate::error::Result;
use crate::linalg::{matrix_exp, psi};
use crate::signals::InputHistory;

use super::{check_len, simpson};

/// `exp(A d) x + ∫_{-d}^0 exp(-A w) B u(w) dw` with `d` the history span.
///
/// Each block of identical held segments contributes
/// `exp(A s) psi(A, L) B u`, where `s` is the distance from the block's end
/// to the anchor, so piecewise-constant histories carry no quadrature error.
/// Segments whose input varies inside the step fall back to Simpson.
pub fn lti_predict(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    x: &[f64],
    hist: &InputHistory,
) -> Result<Vec<f64>> {
    let n = a.nrows();
    check_len(a.ncols(), n)?;
    check_len(b.nrows(), n)?;
    check_len(x.len(), n)?;
    check_len(hist.dim(), b.ncols())?;
    let h = hist.h();
    let len = hist.len();
    let mut out = matrix_exp(&(a * hist.duration()))? * DVector::from_column_slice(x);
    for run in hist.runs() {
        let back = (len - run.first - run.count) as f64 * h;
        let seg = hist.segment(run.first);
        if run.constant {
            if seg.left.iter().all(|v| *v == 0.0) {
                continue;
            }
            let bu = b * DVector::from_column_slice(seg.left);
            out += matrix_exp(&(a * back))? * psi(a, run.count as f64 * h)? * bu;
        } else {
            let g = |dist: f64, u: &[f64]| -> Result<DVector<f64>> {
                Ok(matrix_exp(&(a * dist))? * (b * DVector::from_column_slice(u)))
            };
            let gl = g(back + h, seg.left)?;
            let gm = g(back + 0.5 * h, seg.mid)?;
            let gr = g(back, seg.right)?;
            for i in 0..n {
                out[i] += simpson(h, gl[i], gm[i], gr[i]);
            }
        }
    }
    Ok(out.as_slice().to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: usize, data: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(rows, data.len() / rows, data)
    }

    #[test]
    fn scalar_exponential() {
        let one = m(1, &[1.0]);
        let hist = InputHistory::constant(&[0.0], 1e-3, 300).with_duration(0.3);
        let x = lti_predict(&one, &one, &[1.0], &hist).unwrap();
        assert!((x[0] - 1.349858808).abs() < 1e-9);
    }

    #[test]
    fn integrator_case() {
        let hist = InputHistory::constant(&[3.0], 1e-3, 1000);
        let x = lti_predict(&m(1, &[0.0]), &m(1, &[1.0]), &[2.0], &hist).unwrap();
        assert!((x[0] - 5.0).abs() < 1e-12);
    }

    #[test]
    fn zero_history_is_plain_exponential() {
        let a = m(2, &[0.3, -1.0, 0.7, -0.2]);
        let b = m(2, &[1.0, 0.5]);
        let d = 0.7;
        let hist = InputHistory::constant(&[0.0], 1e-3, 700).with_duration(d);
        let x = [0.4, -1.1];
        let got = lti_predict(&a, &b, &x, &hist).unwrap();
        let want = matrix_exp(&(&a * d)).unwrap() * DVector::from_column_slice(&x);
        assert_eq!(got, want.as_slice().to_vec());
    }

    #[test]
    fn varying_segment_uses_quadrature() {
        // u(s) = s on one step of width h: ∫ u = h²/2 at the anchor end.
        let h = 0.01;
        let mut hist = InputHistory::new(1, h);
        hist.push_segment(crate::signals::Segment {
            left: &[0.0],
            mid: &[h / 2.0],
            right: &[h],
        });
        let x = lti_predict(&m(1, &[0.0]), &m(1, &[1.0]), &[0.0], &hist).unwrap();
        assert!((x[0] - h * h / 2.0).abs() < 1e-18);
    }
}
