//! Plant catalog and the fixed-step RK4 integrator.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::signals::Segment;

/// `ẋ = A x + B u`.
#[derive(Debug, Clone, PartialEq)]
pub struct LtiParams {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
}

impl LtiParams {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>) -> Result<Self> {
        if !a.is_square() {
            return Err(Error::DimensionMismatch {
                expected: a.nrows(),
                got: a.ncols(),
            });
        }
        if b.nrows() != a.nrows() {
            return Err(Error::DimensionMismatch {
                expected: a.nrows(),
                got: b.nrows(),
            });
        }
        Ok(Self { a, b })
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn m(&self) -> usize {
        self.b.ncols()
    }
}

/// Polynomial `p(w) = Σ c_k w^k` with coefficients in increasing degree.
#[derive(Debug, Clone, PartialEq)]
pub struct Polynomial {
    pub coeffs: Vec<f64>,
}

impl Polynomial {
    pub fn new(coeffs: Vec<f64>) -> Self {
        Self { coeffs }
    }

    pub fn eval(&self, w: f64) -> f64 {
        self.coeffs.iter().rev().fold(0.0, |acc, c| acc * w + c)
    }

    /// `∫₀^w p`.
    pub fn antiderivative(&self, w: f64) -> f64 {
        self.coeffs
            .iter()
            .enumerate()
            .rev()
            .fold(0.0, |acc, (k, c)| acc * w + c / (k as f64 + 1.0))
            * w
    }
}

impl Default for Polynomial {
    fn default() -> Self {
        Self::new(vec![0.0, 0.0, 1.0])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PlantModel {
    /// `ẋ = x + u`.
    Scalar,
    Lti(LtiParams),
    /// `ẋ = A x + B u + u C x` with scalar `u`.
    Bilinear {
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        c: DMatrix<f64>,
    },
    /// `ẋ₁ = u₁, ẋ₂ = x₁ u₂, ẋ₃ = u₂`.
    Nonholonomic,
    /// `ẋ₁ = x₂ + x₃², ẋ₂ = x₃ + x₃ u, ẋ₃ = u`.
    Feedforward3d,
    /// `ẋ₁ = x₂ + p(x₂) u, ẋ₂ = u`.
    StrictFeedforward2d {
        p: Polynomial,
    },
    /// Kinematic unicycle, state `(x, y, θ)`, input `(v, ω)`.
    Unicycle,
}

impl PlantModel {
    pub fn lti(a: DMatrix<f64>, b: DMatrix<f64>) -> Result<Self> {
        Ok(Self::Lti(LtiParams::new(a, b)?))
    }

    pub fn bilinear(a: DMatrix<f64>, b: DMatrix<f64>, c: DMatrix<f64>) -> Result<Self> {
        let n = a.nrows();
        for (mat, rows, cols) in [(&a, n, n), (&b, n, 1), (&c, n, n)] {
            if mat.nrows() != rows {
                return Err(Error::DimensionMismatch {
                    expected: rows,
                    got: mat.nrows(),
                });
            }
            if mat.ncols() != cols {
                return Err(Error::DimensionMismatch {
                    expected: cols,
                    got: mat.ncols(),
                });
            }
        }
        Ok(Self::Bilinear { a, b, c })
    }

    /// Catalog tag.
    pub fn id(&self) -> &'static str {
        match self {
            Self::Scalar => "scalar",
            Self::Lti(_) => "lti",
            Self::Bilinear { .. } => "bilinear",
            Self::Nonholonomic => "nonholonomic",
            Self::Feedforward3d => "feedforward3d",
            Self::StrictFeedforward2d { .. } => "strict_feedforward2d",
            Self::Unicycle => "unicycle",
        }
    }

    pub fn n(&self) -> usize {
        match self {
            Self::Scalar => 1,
            Self::Lti(p) => p.n(),
            Self::Bilinear { a, .. } => a.nrows(),
            Self::Nonholonomic | Self::Feedforward3d | Self::Unicycle => 3,
            Self::StrictFeedforward2d { .. } => 2,
        }
    }

    pub fn m(&self) -> usize {
        match self {
            Self::Scalar | Self::Bilinear { .. } | Self::Feedforward3d => 1,
            Self::StrictFeedforward2d { .. } => 1,
            Self::Lti(p) => p.m(),
            Self::Nonholonomic | Self::Unicycle => 2,
        }
    }

    fn check_dims(&self, x: &[f64], u: &[f64]) -> Result<()> {
        if x.len() != self.n() {
            return Err(Error::DimensionMismatch {
                expected: self.n(),
                got: x.len(),
            });
        }
        if u.len() != self.m() {
            return Err(Error::DimensionMismatch {
                expected: self.m(),
                got: u.len(),
            });
        }
        Ok(())
    }

    /// `f(x, u)`.
    pub fn eval_rhs(&self, x: &[f64], u: &[f64]) -> Result<Vec<f64>> {
        self.check_dims(x, u)?;
        let mut out = vec![0.0; self.n()];
        self.rhs_into(x, u, &mut out);
        Ok(out)
    }

    /// `f(x, u)` written into `out`; dimensions are the caller's job.
    pub fn rhs_into(&self, x: &[f64], u: &[f64], out: &mut [f64]) {
        match self {
            Self::Scalar => out[0] = x[0] + u[0],
            Self::Lti(p) => {
                let n = p.n();
                for i in 0..n {
                    let mut acc = 0.0;
                    for j in 0..n {
                        acc += p.a[(i, j)] * x[j];
                    }
                    for (j, uj) in u.iter().enumerate() {
                        acc += p.b[(i, j)] * uj;
                    }
                    out[i] = acc;
                }
            }
            Self::Bilinear { a, b, c } => {
                let n = a.nrows();
                for i in 0..n {
                    let mut ax = 0.0;
                    let mut cx = 0.0;
                    for j in 0..n {
                        ax += a[(i, j)] * x[j];
                        cx += c[(i, j)] * x[j];
                    }
                    out[i] = ax + b[(i, 0)] * u[0] + u[0] * cx;
                }
            }
            Self::Nonholonomic => {
                out[0] = u[0];
                out[1] = x[0] * u[1];
                out[2] = u[1];
            }
            Self::Feedforward3d => {
                out[0] = x[1] + x[2] * x[2];
                out[1] = x[2] + x[2] * u[0];
                out[2] = u[0];
            }
            Self::StrictFeedforward2d { p } => {
                out[0] = x[1] + p.eval(x[1]) * u[0];
                out[1] = u[0];
            }
            Self::Unicycle => {
                out[0] = u[0] * x[2].cos();
                out[1] = u[0] * x[2].sin();
                out[2] = u[1];
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IntegratorConfig {
    pub h: f64,
    pub overflow_bound: f64,
}

impl IntegratorConfig {
    pub const DEFAULT_H: f64 = 1e-3;
    pub const DEFAULT_OVERFLOW: f64 = 1e12;

    pub fn new(h: f64) -> Self {
        Self {
            h,
            overflow_bound: Self::DEFAULT_OVERFLOW,
        }
    }
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self::new(Self::DEFAULT_H)
    }
}

/// Rejects NaN/Inf first, then anything above the overflow bound.
pub fn check_state(x: &[f64], overflow_bound: f64) -> Result<()> {
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteValue {
            context: "integrator state",
        });
    }
    if x.iter().any(|v| v.abs() > overflow_bound) {
        return Err(Error::ForwardCompletenessViolated {
            bound: overflow_bound,
        });
    }
    Ok(())
}

/// Classical RK4 step over `[0, h]` with the input following `seg`: the
/// stages read the left, middle, middle and right values. Held inputs have
/// all three equal.
pub fn rk4_segment(model: &PlantModel, x: &[f64], seg: Segment<'_>, h: f64) -> Vec<f64> {
    let n = x.len();
    let mut k1 = vec![0.0; n];
    let mut k2 = vec![0.0; n];
    let mut k3 = vec![0.0; n];
    let mut k4 = vec![0.0; n];
    let mut tmp = vec![0.0; n];
    model.rhs_into(x, seg.left, &mut k1);
    for i in 0..n {
        tmp[i] = x[i] + 0.5 * h * k1[i];
    }
    model.rhs_into(&tmp, seg.mid, &mut k2);
    for i in 0..n {
        tmp[i] = x[i] + 0.5 * h * k2[i];
    }
    model.rhs_into(&tmp, seg.mid, &mut k3);
    for i in 0..n {
        tmp[i] = x[i] + h * k3[i];
    }
    model.rhs_into(&tmp, seg.right, &mut k4);
    (0..n)
        .map(|i| x[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect()
}

/// One RK4 step of `ẋ = f(x, u)` with `u` frozen, followed by the
/// finiteness and overflow checks.
pub fn integrate_step(
    model: &PlantModel,
    x: &[f64],
    u: &[f64],
    cfg: &IntegratorConfig,
) -> Result<Vec<f64>> {
    integrate_segment(model, x, Segment::constant(u), cfg)
}

/// Same as [`integrate_step`] for an input that varies inside the step.
pub fn integrate_segment(
    model: &PlantModel,
    x: &[f64],
    seg: Segment<'_>,
    cfg: &IntegratorConfig,
) -> Result<Vec<f64>> {
    model.check_dims(x, seg.left)?;
    if seg.mid.len() != seg.left.len() || seg.right.len() != seg.left.len() {
        return Err(Error::DimensionMismatch {
            expected: seg.left.len(),
            got: seg.mid.len().min(seg.right.len()),
        });
    }
    if !(cfg.h > 0.0) {
        return Err(Error::Config(format!(
            "step h must be positive, got {}",
            cfg.h
        )));
    }
    let next = rk4_segment(model, x, seg, cfg.h);
    check_state(&next, cfg.overflow_bound)?;
    Ok(next)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::matrix_exp;
    use proptest::prelude::*;

    fn catalog() -> Vec<PlantModel> {
        vec![
            PlantModel::Scalar,
            PlantModel::lti(
                DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -2.0, -0.3]),
                DMatrix::from_row_slice(2, 1, &[0.0, 1.0]),
            )
            .unwrap(),
            PlantModel::bilinear(
                DMatrix::from_row_slice(2, 2, &[-1.0, 0.5, 0.0, -1.0]),
                DMatrix::from_row_slice(2, 1, &[1.0, 1.0]),
                DMatrix::identity(2, 2) * 0.7,
            )
            .unwrap(),
            PlantModel::Nonholonomic,
            PlantModel::Feedforward3d,
            PlantModel::StrictFeedforward2d {
                p: Polynomial::default(),
            },
            PlantModel::Unicycle,
        ]
    }

    #[test]
    fn rhs_values() {
        assert_eq!(
            PlantModel::Scalar.eval_rhs(&[2.0], &[1.0]).unwrap(),
            vec![3.0]
        );
        assert_eq!(
            PlantModel::Nonholonomic
                .eval_rhs(&[1.0, 0.0, 0.0], &[0.0, 2.0])
                .unwrap(),
            vec![0.0, 2.0, 2.0]
        );
        assert_eq!(
            PlantModel::Feedforward3d
                .eval_rhs(&[0.0, 0.0, 1.0], &[1.0])
                .unwrap(),
            vec![1.0, 2.0, 1.0]
        );
        assert_eq!(
            PlantModel::Unicycle
                .eval_rhs(&[0.0, 0.0, 0.0], &[1.0, 0.0])
                .unwrap(),
            vec![1.0, 0.0, 0.0]
        );
        let sf = PlantModel::StrictFeedforward2d {
            p: Polynomial::default(),
        };
        assert_eq!(sf.eval_rhs(&[0.0, 2.0], &[1.0]).unwrap(), vec![6.0, 1.0]);
    }

    #[test]
    fn rhs_dimension_checks() {
        assert!(matches!(
            PlantModel::Unicycle.eval_rhs(&[0.0, 0.0], &[0.0, 0.0]),
            Err(Error::DimensionMismatch {
                expected: 3,
                got: 2
            })
        ));
        assert!(matches!(
            PlantModel::Scalar.eval_rhs(&[0.0], &[0.0, 1.0]),
            Err(Error::DimensionMismatch {
                expected: 1,
                got: 2
            })
        ));
    }

    #[test]
    fn polynomial_antiderivative() {
        let p = Polynomial::default();
        assert!((p.antiderivative(1.5) - 1.5f64.powi(3) / 3.0).abs() < 1e-15);
        let q = Polynomial::new(vec![1.0, -2.0, 0.0, 4.0]);
        let w = 0.7f64;
        let want = w - w * w + w.powi(4);
        assert!((q.antiderivative(w) - want).abs() < 1e-15);
    }

    #[test]
    fn scalar_step_matches_exponential() {
        let cfg = IntegratorConfig::new(0.1);
        let x = integrate_step(&PlantModel::Scalar, &[1.0], &[0.0], &cfg).unwrap()[0];
        let h = 0.1f64;
        // RK4 on a linear ODE is the degree-4 Taylor polynomial of exp(h).
        let taylor = 1.0 + h + h * h / 2.0 + h.powi(3) / 6.0 + h.powi(4) / 24.0;
        assert!((x - taylor).abs() < 1e-15);
        // the local truncation error h^5/120 is about 8.5e-8
        assert!((x - h.exp()).abs() < 1e-7);
    }

    #[test]
    fn straight_line_unicycle() {
        let cfg = IntegratorConfig::new(0.01);
        let x =
            integrate_step(&PlantModel::Unicycle, &[0.2, -0.1, 0.0], &[1.0, 0.0], &cfg).unwrap();
        assert!((x[0] - 0.21).abs() < 1e-12);
        assert!((x[1] + 0.1).abs() < 1e-12);
        assert!(x[2].abs() < 1e-12);
    }

    #[test]
    fn equilibrium_is_bit_exact() {
        let cfg = IntegratorConfig::default();
        for model in catalog() {
            let mut x = vec![0.0; model.n()];
            let u = vec![0.0; model.m()];
            for _ in 0..1000 {
                x = integrate_step(&model, &x, &u, &cfg).unwrap();
            }
            assert!(x.iter().all(|v| *v == 0.0), "{}", model.id());
        }
    }

    #[test]
    fn overflow_and_nan_guards() {
        let cfg = IntegratorConfig {
            h: 0.1,
            overflow_bound: 10.0,
        };
        assert!(matches!(
            integrate_step(&PlantModel::Scalar, &[9.9], &[5.0], &cfg),
            Err(Error::ForwardCompletenessViolated { .. })
        ));
        assert!(matches!(
            integrate_step(&PlantModel::Scalar, &[f64::NAN], &[0.0], &cfg),
            Err(Error::NonFiniteValue { .. })
        ));
    }

    #[test]
    fn order_check_under_halving() {
        // Fast modes keep the one-step error well above rounding for every h
        // in [1e-4, 1e-2].
        let a = DMatrix::from_row_slice(2, 2, &[200.0, 10.0, 0.0, 150.0]);
        let model = PlantModel::lti(a.clone(), DMatrix::zeros(2, 1)).unwrap();
        let x0 = [0.6, -0.8];
        let err = |h: f64| {
            let x = integrate_step(&model, &x0, &[0.0], &IntegratorConfig::new(h)).unwrap();
            let exact = matrix_exp(&(&a * h)).unwrap() * nalgebra::DVector::from_column_slice(&x0);
            let scale = exact.norm();
            ((x[0] - exact[0]).powi(2) + (x[1] - exact[1]).powi(2)).sqrt() / scale
        };
        let mut h = 1e-2;
        while h / 2.0 >= 1e-4 * 0.999 {
            let ratio = err(h) / err(h / 2.0);
            assert!(ratio >= 12.0, "h={h}: ratio {ratio}");
            h /= 2.0;
        }
    }

    proptest! {
        #[test]
        fn nonholonomic_a_priori_bound(
            x0 in prop::array::uniform3(-3.0f64..3.0),
            u in prop::array::uniform2(-3.0f64..3.0),
            t_span in 0.05f64..1.0,
        ) {
            let steps = 200;
            let cfg = IntegratorConfig::new(t_span / steps as f64);
            let model = PlantModel::Nonholonomic;
            let nx0 = crate::signals::norm(&x0);
            let nu = crate::signals::norm(&u);
            let bound = 3.0 * nx0 + t_span * (2.0 + nx0) * nu + t_span * t_span / 2.0 * nu * nu;
            let mut x = x0.to_vec();
            let mut sup = nx0;
            for _ in 0..steps - 1 {
                x = integrate_step(&model, &x, &u, &cfg).unwrap();
                sup = sup.max(crate::signals::norm(&x));
            }
            prop_assert!(sup <= bound + 1e-12);
        }
    }
}
