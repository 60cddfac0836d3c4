use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};

use crate::error::{check_len, Error, Result};
use crate::predictors::Predictor;
use crate::signals::InputHistory;

use super::feedback::NominalFeedback;

/// `l` with `τ = l T`, accepting a mismatch of at most `h / 2`.
pub fn input_delay_periods(tau: f64, period: f64, h: f64) -> Result<usize> {
    if !(period > 0.0) {
        return Err(Error::Config(format!(
            "sampling period must be positive, got {period}"
        )));
    }
    let l = (tau / period).round();
    if (tau - l * period).abs() > 0.5 * h || l < 0.0 {
        return Err(Error::SamplingPeriodMismatch { tau, period });
    }
    Ok(l as usize)
}

/// Integer part of `r / T`, robust to rounding in `r` and `T`.
pub fn measurement_delay_periods(r: f64, period: f64) -> usize {
    (r / period + 1e-9).floor().max(0.0) as usize
}

/// Predictor-based law with zero-order hold: `u_i = k(τ_i + τ, Φ(y_i, window))`.
#[derive(Debug, Clone)]
pub struct ZohController {
    feedback: NominalFeedback,
    predictor: Predictor,
    tau: f64,
    l: usize,
}

impl ZohController {
    pub fn new(
        feedback: NominalFeedback,
        predictor: Predictor,
        period: f64,
        h: f64,
    ) -> Result<Self> {
        let tau = predictor.spec().tau;
        let l = input_delay_periods(tau, period, h)?;
        Ok(Self {
            feedback,
            predictor,
            tau,
            l,
        })
    }

    pub fn l(&self) -> usize {
        self.l
    }

    /// Returns the prediction and the input to hold until the next instant.
    pub fn sample(&self, t: f64, y: &[f64], window: &InputHistory) -> Result<(Vec<f64>, Vec<f64>)> {
        let phi = self.predictor.predict(y, window)?;
        let u = self.feedback.eval(t + self.tau, &phi);
        Ok((phi, u))
    }
}

/// Past held inputs `u_{i-1}, …, u_{i-capacity}`, newest first.
#[derive(Debug, Clone, PartialEq)]
pub struct InputRingBuffer {
    m: usize,
    entries: VecDeque<Vec<f64>>,
}

impl InputRingBuffer {
    pub fn new(capacity: usize, m: usize) -> Self {
        Self::from_fn(capacity, m, |_| vec![0.0; m])
    }

    /// Entry `p` (1-based) is `init(p)`.
    pub fn from_fn(capacity: usize, m: usize, init: impl Fn(usize) -> Vec<f64>) -> Self {
        let entries = (1..=capacity)
            .map(|p| {
                let u = init(p);
                assert_eq!(u.len(), m, "ring entry dimension");
                u
            })
            .collect();
        Self { m, entries }
    }

    pub fn capacity(&self) -> usize {
        self.entries.len()
    }

    /// `u_{i-p}` for `p = 1..=capacity`.
    pub fn get(&self, p: usize) -> &[f64] {
        &self.entries[p - 1]
    }

    /// Shift in the input just computed.
    pub fn push(&mut self, u: &[f64]) -> Result<()> {
        check_len(u.len(), self.m)?;
        if self.entries.pop_back().is_some() {
            self.entries.push_front(u.to_vec());
        }
        Ok(())
    }
}

/// Sampled law without compensation, `u_i = K y_i`.
#[derive(Debug, Clone)]
pub struct Uncompensated {
    k: DMatrix<f64>,
}

impl Uncompensated {
    pub fn new(k: DMatrix<f64>) -> Self {
        Self { k }
    }

    pub fn sample(&self, y: &[f64]) -> Result<Vec<f64>> {
        check_len(y.len(), self.k.ncols())?;
        Ok((&self.k * DVector::from_column_slice(y))
            .as_slice()
            .to_vec())
    }
}
