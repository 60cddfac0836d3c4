use serde::Serialize;

use crate::error::Result;
use crate::predictors::Predictor;
use crate::signals::{norm, InputHistory};

use super::dynamic::InputProfile;
use super::feedback::NominalFeedback;
use super::zoh::input_delay_periods;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Region {
    C1,
    C2,
    C3,
}

/// Exact membership predicates `(C1, C2, C3)` on chained coordinates.
pub fn exact_regions(x: &[f64]) -> [bool; 3] {
    let (x1, x2, x3) = (x[0], x[1], x[2]);
    let gap = 2.0 * x2 - x1 * x3;
    [
        x2 != 0.0 && gap != 0.0,
        x2 == 0.0 && x1 * x3 != 0.0,
        gap == 0.0,
    ]
}

/// Classifies with tolerance `1e-9 (1 + |x|)`, testing C3, then C2, then C1.
pub fn classify_region(x: &[f64]) -> Region {
    let eps = 1e-9 * (1.0 + norm(x));
    let (x1, x2, x3) = (x[0], x[1], x[2]);
    if (2.0 * x2 - x1 * x3).abs() <= eps {
        Region::C3
    } else if x2.abs() <= eps {
        Region::C2
    } else {
        Region::C1
    }
}

/// Discontinuous dead-beat law for the nonholonomic integrator with sampling
/// period `T`.
pub fn unicycle_region(x: &[f64], period: f64) -> (Region, [f64; 2]) {
    let (x1, x2, x3) = (x[0], x[1], x[2]);
    let t = period;
    let region = classify_region(x);
    let k = match region {
        Region::C3 => [-x1 / t, -x3 / t],
        Region::C2 => {
            let d = x1 * x1 + x3 * x3;
            if d == 0.0 {
                [0.0, 0.0]
            } else {
                [-x1 * x3 * x3 / (t * d), x3 * x1 * x1 / (t * d)]
            }
        }
        Region::C1 => {
            let s = x2.abs().sqrt();
            let sgn = if x2 > 0.0 {
                1.0
            } else if x2 < 0.0 {
                -1.0
            } else {
                0.0
            };
            [-2.0 / t * sgn * s - 2.0 / t * x1, s / t]
        }
    };
    (region, k)
}

/// Solution of `ẋ₁ = u₁, ẋ₂ = x₁u₂, ẋ₃ = u₂` after time `t` under constant `u`.
pub fn nonholonomic_constant_input(x: &[f64], u: &[f64], t: f64) -> [f64; 3] {
    [
        x[0] + u[0] * t,
        x[1] + u[1] * (x[0] * t + 0.5 * u[0] * t * t),
        x[2] + u[1] * t,
    ]
}

/// Pose `(x, y, θ)` to chained coordinates.
pub fn chained_from_pose(p: &[f64]) -> [f64; 3] {
    let (c, s) = (p[2].cos(), p[2].sin());
    [p[0] * c + p[1] * s, p[0] * s - p[1] * c, p[2]]
}

/// Chained input `k` at chained state `x` to vehicle inputs `(v, ω)`.
pub fn vehicle_inputs(x: &[f64], k: &[f64]) -> [f64; 2] {
    let omega = k[1];
    [k[0] + x[1] * omega, omega]
}

/// What the unicycle law keeps constant over a sampling period.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum UnicycleHold {
    /// Chained inputs `(u₁, u₂)` are held; `v(s) = k₁ + x̂₂(s) k₂` follows the
    /// predicted chained state, which keeps the three-step dead-beat chain.
    #[default]
    Chained,
    /// Vehicle inputs `(v, ω)` are held at their values at the sampling instant.
    Vehicle,
}

impl UnicycleHold {
    pub fn parse(name: &str) -> Option<Self> {
        match name {
            "chained" => Some(Self::Chained),
            "vehicle" => Some(Self::Vehicle),
            _ => None,
        }
    }
}

/// Zero-order-hold vehicle controller: predict the pose, move to chained
/// coordinates, apply the region law and map back to `(v, ω)`.
#[derive(Debug, Clone)]
pub struct UnicycleZoh {
    predictor: Predictor,
    period: f64,
    hold: UnicycleHold,
    chained: [f64; 3],
    k: [f64; 2],
}

impl UnicycleZoh {
    pub fn new(predictor: Predictor, period: f64, h: f64, hold: UnicycleHold) -> Result<Self> {
        input_delay_periods(predictor.spec().tau, period, h)?;
        Ok(Self {
            predictor,
            period,
            hold,
            chained: [0.0; 3],
            k: [0.0; 2],
        })
    }

    /// Returns the predicted pose and `(v, ω)` at the sampling instant.
    pub fn sample(&mut self, pose: &[f64], window: &InputHistory) -> Result<(Vec<f64>, Vec<f64>)> {
        let phi = self.predictor.predict(pose, window)?;
        let x = chained_from_pose(&phi);
        let (_, k) = unicycle_region(&x, self.period);
        self.chained = x;
        self.k = k;
        Ok((phi, vehicle_inputs(&x, &k).to_vec()))
    }

    /// `(v, ω)` at `s` seconds after the last sampling instant.
    pub fn output(&self, s: f64) -> Vec<f64> {
        match self.hold {
            UnicycleHold::Vehicle => vehicle_inputs(&self.chained, &self.k).to_vec(),
            UnicycleHold::Chained => {
                let x = nonholonomic_constant_input(&self.chained, &self.k, s);
                vehicle_inputs(&x, &self.k).to_vec()
            }
        }
    }

    /// Input over the micro-step `[s, s + dt)` after the last sampling instant.
    pub fn profile(&self, s: f64, dt: f64) -> InputProfile {
        InputProfile {
            left: self.output(s),
            mid: self.output(s + 0.5 * dt),
            right: self.output(s + dt),
        }
    }
}

/// Lifts a stabilizer `k(t, ξ)` of the nonholonomic integrator to a pose
/// feedback: `ω = k₂(t, ξ)`, `v = k₁(t, ξ) + ξ₂ ω` with `ξ` the chained
/// coordinates of the pose.
pub fn unicycle_pose_feedback(k: NominalFeedback) -> NominalFeedback {
    let name = format!("unicycle[{}]", k.name);
    let time_varying = k.time_varying;
    NominalFeedback::new(name, 3, 2, time_varying, move |t, pose| {
        let xi = chained_from_pose(pose);
        vehicle_inputs(&xi, &k.eval(t, &xi)).to_vec()
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn region_examples() {
        let t = 0.5;
        let (r, k) = unicycle_region(&[1.0, 1.0, 2.0], t);
        assert_eq!(r, Region::C3);
        assert_eq!(k, [-1.0 / t, -2.0 / t]);
        let (r, k) = unicycle_region(&[0.0, 1.0, 0.0], t);
        assert_eq!(r, Region::C1);
        assert_eq!(k, [-2.0 / t, 1.0 / t]);
        let (r, k) = unicycle_region(&[-2.0, 0.0, 1.0], t);
        assert_eq!(r, Region::C2);
        assert!((k[0] - 2.0 / (5.0 * t)).abs() < 1e-15);
        assert!((k[1] - 4.0 / (5.0 * t)).abs() < 1e-15);
    }

    #[test]
    fn three_step_chain() {
        let t = 0.8;
        let x0 = [0.7, -0.4, 1.3];
        let (r0, k0) = unicycle_region(&x0, t);
        assert_eq!(r0, Region::C1);
        let x1 = nonholonomic_constant_input(&x0, &k0, t);
        let (r1, k1) = unicycle_region(&x1, t);
        assert!(matches!(r1, Region::C2 | Region::C3));
        let x2 = nonholonomic_constant_input(&x1, &k1, t);
        let (r2, k2) = unicycle_region(&x2, t);
        assert_eq!(r2, Region::C3);
        let x3 = nonholonomic_constant_input(&x2, &k2, t);
        assert!(norm(&x3) < 1e-12);
    }

    #[test]
    fn chained_inputs_reproduce_vehicle_dynamics() {
        let pose = [0.3, -1.2, 0.9];
        let xi = chained_from_pose(&pose);
        let k = [0.4, -0.7];
        let [v, w] = vehicle_inputs(&xi, &k);
        // ξ̇₁ = v - ξ₂ ω must equal k₁
        assert!((v - xi[1] * w - k[0]).abs() < 1e-15);
    }

    #[test]
    fn zero_pose_zero_inputs() {
        let (_, k) = unicycle_region(&[0.0; 3], 1.0);
        assert_eq!(vehicle_inputs(&[0.0; 3], &k), [0.0, 0.0]);
    }
}
