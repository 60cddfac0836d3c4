use crate::error::{check_len, Result};
use crate::plants::{check_state, PlantModel};
use crate::predictors::Predictor;
use crate::signals::InputHistory;

use super::feedback::{closed_loop_rhs, NominalFeedback};

/// Input over one micro-step: values at its start, midpoint and end.
#[derive(Debug, Clone, PartialEq)]
pub struct InputProfile {
    pub left: Vec<f64>,
    pub mid: Vec<f64>,
    pub right: Vec<f64>,
}

impl InputProfile {
    pub fn held(u: Vec<f64>) -> Self {
        Self {
            left: u.clone(),
            mid: u.clone(),
            right: u,
        }
    }

    pub fn segment(&self) -> crate::signals::Segment<'_> {
        crate::signals::Segment {
            left: &self.left,
            mid: &self.mid,
            right: &self.right,
        }
    }
}

/// Sampled-data dynamic controller: between sampling instants the observer
/// follows `ż = f(z, k(t + τ, z))`; at each instant it is reset to the
/// prediction `Φ(y, window)`. The output is `u(t) = k(t + τ, z(t))`.
#[derive(Debug, Clone)]
pub struct DynamicController {
    plant: PlantModel,
    feedback: NominalFeedback,
    predictor: Predictor,
    tau: f64,
    overflow_bound: f64,
    z: Vec<f64>,
}

impl DynamicController {
    pub fn new(
        plant: PlantModel,
        feedback: NominalFeedback,
        predictor: Predictor,
        tau: f64,
        overflow_bound: f64,
        z0: Vec<f64>,
    ) -> Result<Self> {
        check_len(z0.len(), plant.n())?;
        check_len(feedback.n, plant.n())?;
        check_len(feedback.m, plant.m())?;
        Ok(Self {
            plant,
            feedback,
            predictor,
            tau,
            overflow_bound,
            z: z0,
        })
    }

    pub fn z(&self) -> &[f64] {
        &self.z
    }

    pub fn predictor(&self) -> &Predictor {
        &self.predictor
    }

    /// Reset `z ← Φ(y, window)`; returns the new observer state.
    pub fn sample(&mut self, y: &[f64], window: &InputHistory) -> Result<Vec<f64>> {
        self.z = self.predictor.predict(y, window)?;
        Ok(self.z.clone())
    }

    /// `k(t + τ, z)`.
    pub fn output(&self, t: f64) -> Vec<f64> {
        self.feedback.eval(t + self.tau, &self.z)
    }

    /// Advance `z` from `t` to `t + dt` with one RK4 step of the closed-loop
    /// observer and return the emitted input over the step. The midpoint
    /// value uses the cubic Hermite interpolant of `z`.
    pub fn flow(&mut self, t: f64, dt: f64) -> Result<InputProfile> {
        let n = self.z.len();
        let z0 = self.z.clone();
        let shift = self.tau;
        let (plant, k) = (&self.plant, &self.feedback);
        let add = |a: &[f64], b: &[f64], s: f64| -> Vec<f64> {
            (0..n).map(|i| a[i] + s * b[i]).collect()
        };
        let k1 = closed_loop_rhs(plant, k, t, &z0, shift);
        let k2 = closed_loop_rhs(plant, k, t + 0.5 * dt, &add(&z0, &k1, 0.5 * dt), shift);
        let k3 = closed_loop_rhs(plant, k, t + 0.5 * dt, &add(&z0, &k2, 0.5 * dt), shift);
        let k4 = closed_loop_rhs(plant, k, t + dt, &add(&z0, &k3, dt), shift);
        let z1: Vec<f64> = (0..n)
            .map(|i| z0[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
            .collect();
        check_state(&z1, self.overflow_bound)?;
        let d1 = closed_loop_rhs(plant, k, t + dt, &z1, shift);
        let zm: Vec<f64> = (0..n)
            .map(|i| 0.5 * (z0[i] + z1[i]) + dt / 8.0 * (k1[i] - d1[i]))
            .collect();
        let profile = InputProfile {
            left: k.eval(t + shift, &z0),
            mid: k.eval(t + 0.5 * dt + shift, &zm),
            right: k.eval(t + dt + shift, &z1),
        };
        self.z = z1;
        Ok(profile)
    }
}
