use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::plants::PlantModel;
use crate::signals::norm;

pub type FeedbackFn = Arc<dyn Fn(f64, &[f64]) -> Vec<f64> + Send + Sync>;

/// Delay-free feedback `u = k(t, x)`.
#[derive(Clone)]
pub struct NominalFeedback {
    pub name: String,
    pub n: usize,
    pub m: usize,
    pub time_varying: bool,
    pub zero_at_origin: bool,
    /// `K` when the law is `u = K x`.
    pub linear_gain: Option<DMatrix<f64>>,
    eval: FeedbackFn,
}

impl fmt::Debug for NominalFeedback {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("NominalFeedback")
            .field("name", &self.name)
            .field("n", &self.n)
            .field("m", &self.m)
            .field("time_varying", &self.time_varying)
            .finish_non_exhaustive()
    }
}

impl NominalFeedback {
    pub fn new(
        name: impl Into<String>,
        n: usize,
        m: usize,
        time_varying: bool,
        eval: impl Fn(f64, &[f64]) -> Vec<f64> + Send + Sync + 'static,
    ) -> Self {
        Self {
            name: name.into(),
            n,
            m,
            time_varying,
            zero_at_origin: true,
            linear_gain: None,
            eval: Arc::new(eval),
        }
    }

    pub fn eval(&self, t: f64, x: &[f64]) -> Vec<f64> {
        (self.eval)(t, x)
    }

    /// `u = K x` with `K` of shape `m × n`.
    pub fn linear(k: DMatrix<f64>) -> Self {
        let (m, n) = k.shape();
        let gain = k.clone();
        let mut fb = Self::new("linear", n, m, false, move |_, x| {
            (0..m)
                .map(|i| (0..n).map(|j| k[(i, j)] * x[j]).sum())
                .collect()
        });
        fb.linear_gain = Some(gain);
        fb
    }

    /// Smooth stabilizer for `ẋ₁ = x₂ + x₃², ẋ₂ = x₃ + x₃u, ẋ₃ = u`.
    pub fn feedforward3d() -> Self {
        Self::new("feedforward3d", 3, 1, false, |_, x| {
            let (x1, x2, x3) = (x[0], x[1], x[2]);
            let w = x2 - 0.5 * x3 * x3;
            let inner = -4.0 - x1 - 2.0 * x2 + 0.5 * x3 + 0.5 * x2 * x3 + 0.625 * x3 * x3
                - 0.25 * x3.powi(3)
                - 0.375 * w * w;
            vec![-x1 - 3.0 * x2 - 0.375 * x2 * x2 + 0.75 * x3 * inner]
        })
    }

    /// A 2π-periodic stabilizer for the nonholonomic integrator
    /// `ẋ₁ = u₁, ẋ₂ = x₁u₂, ẋ₃ = u₂`:
    /// `u₁ = -x₁ - 2 sgn(x₂) √|x₂| cos t`, `u₂ = -x₃ + √|x₂| sin t`.
    pub fn nonholonomic_periodic() -> Self {
        Self::new("nonholonomic_periodic", 3, 2, true, |t, x| {
            let s = x[1].abs().sqrt();
            let sgn = if x[1] > 0.0 {
                1.0
            } else if x[1] < 0.0 {
                -1.0
            } else {
                0.0
            };
            vec![-x[0] - 2.0 * sgn * s * t.cos(), -x[2] + s * t.sin()]
        })
    }

    /// Zero feedback with the given dimensions.
    pub fn zeros(n: usize, m: usize) -> Self {
        Self::new("zero", n, m, false, move |_, _| vec![0.0; m])
    }

    /// `|k(t, 0)| ≤ 1e-12` at `t ∈ {t0, t0 + T/2, t0 + T}`.
    pub fn check_zero_at_origin(&self, t0: f64, period: f64) -> Result<()> {
        let origin = vec![0.0; self.n];
        for t in [t0, t0 + 0.5 * period, t0 + period] {
            let u = self.eval(t, &origin);
            if u.len() != self.m {
                return Err(Error::DimensionMismatch {
                    expected: self.m,
                    got: u.len(),
                });
            }
            let size = norm(&u);
            if !(size <= 1e-12) {
                return Err(Error::NominalFeedbackSuspect {
                    name: self.name.clone(),
                    reason: format!("k({t}, 0) has norm {size:e}"),
                });
            }
        }
        Ok(())
    }

    /// Delay-free check: from each initial state, the continuous closed loop
    /// `ẋ = f(x, k(t, x))` must shrink `|x|` tenfold within `horizon`.
    pub fn sanity_run(
        &self,
        plant: &PlantModel,
        initial: &[Vec<f64>],
        horizon: f64,
        h: f64,
    ) -> Result<()> {
        if plant.n() != self.n || plant.m() != self.m {
            return Err(Error::DimensionMismatch {
                expected: plant.n(),
                got: self.n,
            });
        }
        let steps = (horizon / h).round() as usize;
        for x0 in initial {
            let target = 0.1 * norm(x0);
            let mut x = x0.clone();
            let mut reached = false;
            for k in 0..steps {
                x = closed_loop_step(plant, self, k as f64 * h, &x, h, 0.0);
                if x.iter().any(|v| !v.is_finite() || v.abs() > 1e12) {
                    break;
                }
                if norm(&x) <= target {
                    reached = true;
                    break;
                }
            }
            if !reached {
                return Err(Error::NominalFeedbackSuspect {
                    name: self.name.clone(),
                    reason: format!("no tenfold decrease within {horizon} s from {x0:?}"),
                });
            }
        }
        Ok(())
    }

    /// Fixed initial states used by [`NominalFeedback::sanity_run`].
    pub fn sanity_initial_states(n: usize) -> Vec<Vec<f64>> {
        let mut set = vec![vec![0.5; n]];
        for i in 0..n {
            let mut e = vec![0.0; n];
            e[i] = 1.0;
            set.push(e.clone());
            e[i] = -0.5;
            set.push(e);
        }
        set
    }
}

/// `ẋ = f(x, k(t + shift, x))`, evaluated on state `x` at time `t`.
pub(crate) fn closed_loop_rhs(
    plant: &PlantModel,
    k: &NominalFeedback,
    t: f64,
    x: &[f64],
    shift: f64,
) -> Vec<f64> {
    let u = k.eval(t + shift, x);
    let mut out = vec![0.0; x.len()];
    plant.rhs_into(x, &u, &mut out);
    out
}

/// One RK4 step of the continuous closed loop.
pub(crate) fn closed_loop_step(
    plant: &PlantModel,
    k: &NominalFeedback,
    t: f64,
    x: &[f64],
    h: f64,
    shift: f64,
) -> Vec<f64> {
    let n = x.len();
    let add =
        |a: &[f64], b: &[f64], s: f64| -> Vec<f64> { (0..n).map(|i| a[i] + s * b[i]).collect() };
    let k1 = closed_loop_rhs(plant, k, t, x, shift);
    let k2 = closed_loop_rhs(plant, k, t + 0.5 * h, &add(x, &k1, 0.5 * h), shift);
    let k3 = closed_loop_rhs(plant, k, t + 0.5 * h, &add(x, &k2, 0.5 * h), shift);
    let k4 = closed_loop_rhs(plant, k, t + h, &add(x, &k3, h), shift);
    (0..n)
        .map(|i| x[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect()
}
