use crate::error::Result;
use crate::signals::InputHistory;

use super::{check_len, half_step, simpson};

/// Closed-form predictor for `ẋ₁ = x₂ + x₃², ẋ₂ = x₃ + x₃u, ẋ₃ = u`.
///
/// With `U(s) = ∫_{-d}^s u` and `V(s) = ∫_{-d}^s (1 + u) U`:
///
/// - `φ₃ = x₃ + U(0)`
/// - `φ₂ = x₂ + d x₃ + x₃ U(0) + V(0)`
/// - `φ₁ = x₁ + d x₂ + d x₃² + d² x₃ / 2 + 3 x₃ ∫U + ∫V + ∫U²`
///
/// The nested integrals are built per micro-step with Simpson's rule; for
/// held inputs every integrand is a polynomial of degree ≤ 2, so the result
/// is exact up to rounding.
pub fn feedforward3d_predict(x: &[f64], hist: &InputHistory) -> Result<Vec<f64>> {
    check_len(x.len(), 3)?;
    check_len(hist.dim(), 1)?;
    let h = hist.h();
    let d = hist.duration();
    let (mut big_u, mut big_v) = (0.0, 0.0);
    let (mut int_u, mut int_v, mut int_u2) = (0.0, 0.0, 0.0);
    for j in 0..hist.len() {
        let seg = hist.segment(j);
        let (ul, um, ur) = (seg.left[0], seg.mid[0], seg.right[0]);
        let u_mid = big_u + half_step(h, ul, um, ur);
        let u_end = big_u + simpson(h, ul, um, ur);
        let (vl, vm, vr) = ((1.0 + ul) * big_u, (1.0 + um) * u_mid, (1.0 + ur) * u_end);
        let v_mid = big_v + half_step(h, vl, vm, vr);
        let v_end = big_v + simpson(h, vl, vm, vr);
        int_u += simpson(h, big_u, u_mid, u_end);
        int_v += simpson(h, big_v, v_mid, v_end);
        int_u2 += simpson(h, big_u * big_u, u_mid * u_mid, u_end * u_end);
        big_u = u_end;
        big_v = v_end;
    }
    let (x1, x2, x3) = (x[0], x[1], x[2]);
    let phi3 = x3 + big_u;
    let phi2 = x2 + d * x3 + x3 * big_u + big_v;
    let phi1 = x1 + d * x2 + d * x3 * x3 + 0.5 * d * d * x3 + 3.0 * x3 * int_u + int_v + int_u2;
    Ok(vec![phi1, phi2, phi3])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_data() {
        let hist = InputHistory::constant(&[0.0], 1e-3, 500);
        assert_eq!(
            feedforward3d_predict(&[0.0; 3], &hist).unwrap(),
            vec![0.0; 3]
        );
    }

    #[test]
    fn hand_evaluation() {
        let hist = InputHistory::constant(&[0.0], 1e-3, 1000).with_duration(1.0);
        let x = feedforward3d_predict(&[0.0, 0.0, 1.0], &hist).unwrap();
        assert!((x[0] - 1.5).abs() < 1e-14);
        assert!((x[1] - 1.0).abs() < 1e-14);
        assert!((x[2] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn constant_input_from_origin() {
        // x₃ = c s, x₂ = (c + c²) s²/2, x₁ = (c + c²) s³/6 + c² s³/3
        let (c, d) = (0.7f64, 1.2f64);
        let hist = InputHistory::constant(&[c], 1e-3, 1200).with_duration(d);
        let x = feedforward3d_predict(&[0.0; 3], &hist).unwrap();
        let want = [
            (c + c * c) * d.powi(3) / 6.0 + c * c * d.powi(3) / 3.0,
            (c + c * c) * d * d / 2.0,
            c * d,
        ];
        for i in 0..3 {
            assert!(
                (x[i] - want[i]).abs() < 1e-12,
                "{i}: {} vs {}",
                x[i],
                want[i]
            );
        }
    }
}
