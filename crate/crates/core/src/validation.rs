//! Randomized cross-validation of the closed-form predictors against the
//! numeric oracle.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::Result;
use crate::plants::{IntegratorConfig, PlantModel, Polynomial};
use crate::predictors::{numeric_predict, Predictor, PredictorKind, PredictorSpec};
use crate::signals::{InputHistory, Segment};

pub const ORACLE_H: f64 = 1e-3;

#[derive(Debug, Clone, Serialize)]
pub struct OracleReport {
    pub kind: PredictorKind,
    pub samples: usize,
    pub max_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

/// Tolerance on the scaled error `|Φ - Φ_num|∞ / max(1, |Φ_num|∞)`.
pub fn tolerance(kind: PredictorKind) -> f64 {
    match kind {
        PredictorKind::Unicycle => 1e-8,
        _ => 1e-5,
    }
}

pub fn scaled_error(got: &[f64], oracle: &[f64]) -> f64 {
    let scale = oracle.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    got.iter()
        .zip(oracle)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max)
        / scale
}

fn uniform_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, amp: f64) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-amp..amp))
}

fn uniform_vec(rng: &mut ChaCha8Rng, n: usize, amp: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-amp..amp)).collect()
}

/// Random input history of `steps` micro-steps: held blocks of random length,
/// and with probability `smooth` a block whose value varies inside each step.
pub fn random_history(
    rng: &mut ChaCha8Rng,
    dim: usize,
    h: f64,
    steps: usize,
    amp: f64,
    smooth: f64,
) -> InputHistory {
    let mut hist = InputHistory::new(dim, h);
    while hist.len() < steps {
        let block = rng.random_range(10..300).min(steps - hist.len());
        if rng.random_bool(smooth) {
            let phase = uniform_vec(rng, dim, 3.0);
            let freq = uniform_vec(rng, dim, 6.0);
            let start = hist.len();
            let value = |k: f64| -> Vec<f64> {
                (0..dim)
                    .map(|i| amp * (phase[i] + freq[i] * k * h).sin())
                    .collect()
            };
            for j in 0..block {
                let t = (start + j) as f64;
                let (l, m, r) = (value(t), value(t + 0.5), value(t + 1.0));
                hist.push_segment(Segment {
                    left: &l,
                    mid: &m,
                    right: &r,
                });
            }
        } else {
            let u = uniform_vec(rng, dim, amp);
            for _ in 0..block {
                hist.push_constant(&u);
            }
        }
    }
    hist
}

fn random_plant(rng: &mut ChaCha8Rng, kind: PredictorKind, sample: usize) -> PlantModel {
    match kind {
        PredictorKind::Lti | PredictorKind::Numeric => {
            let n = 2 + sample % 2;
            let m = 1 + sample % 2;
            PlantModel::lti(
                uniform_matrix(rng, n, n, 1.0),
                uniform_matrix(rng, n, m, 1.0),
            )
            .expect("consistent dimensions")
        }
        PredictorKind::Bilinear => {
            let n = 2 + sample % 2;
            let a = uniform_matrix(rng, n, n, 1.0);
            let alpha = rng.random_range(-0.5..0.5);
            let beta = rng.random_range(-0.5..0.5);
            let c = DMatrix::identity(n, n) * alpha + &a * beta;
            PlantModel::bilinear(a, uniform_matrix(rng, n, 1, 1.0), c)
                .expect("consistent dimensions")
        }
        PredictorKind::Cascade => match sample % 5 {
            0 => PlantModel::Feedforward3d,
            1 => PlantModel::Nonholonomic,
            2 => PlantModel::StrictFeedforward2d {
                p: Polynomial::new(uniform_vec(rng, 3, 1.0)),
            },
            3 => PlantModel::Unicycle,
            _ => PlantModel::Scalar,
        },
        PredictorKind::Feedforward3d => PlantModel::Feedforward3d,
        PredictorKind::Unicycle => PlantModel::Unicycle,
    }
}

/// One randomized comparison; returns the scaled error.
pub fn oracle_sample(rng: &mut ChaCha8Rng, kind: PredictorKind, sample: usize) -> Result<f64> {
    let plant = random_plant(rng, kind, sample);
    let steps = rng.random_range(200..1500);
    let split = rng.random_range(0..=steps);
    let span = steps as f64 * ORACLE_H;
    let spec = PredictorSpec {
        kind,
        r: split as f64 * ORACLE_H,
        tau: span - split as f64 * ORACLE_H,
    };
    let cfg = IntegratorConfig::new(ORACLE_H);
    let predictor = Predictor::new(spec, &plant, cfg)?;
    let x = uniform_vec(rng, plant.n(), 1.0);
    let smooth = if sample % 3 == 0 { 0.5 } else { 0.0 };
    let hist = random_history(
        rng,
        plant.m(),
        ORACLE_H,
        predictor.window_steps(),
        1.0,
        smooth,
    );
    let got = predictor.predict(&x, &hist)?;
    let oracle = numeric_predict(&plant, &x, &hist, &cfg)?;
    Ok(scaled_error(&got, &oracle))
}

/// Runs `samples` comparisons for each closed-form variant.
pub fn validate_predictors(samples: usize, seed: u64) -> Result<Vec<OracleReport>> {
    let kinds = [
        PredictorKind::Lti,
        PredictorKind::Bilinear,
        PredictorKind::Cascade,
        PredictorKind::Feedforward3d,
        PredictorKind::Unicycle,
    ];
    let mut reports = Vec::new();
    for (offset, kind) in kinds.into_iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(offset as u64));
        let mut max_error = 0.0f64;
        for sample in 0..samples {
            let e = oracle_sample(&mut rng, kind, sample)?;
            max_error = if e.is_nan() {
                f64::NAN
            } else {
                max_error.max(e)
            };
        }
        let tol = tolerance(kind);
        reports.push(OracleReport {
            kind,
            samples,
            max_error,
            tolerance: tol,
            passed: max_error <= tol,
        });
    }
    Ok(reports)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_batch_passes() {
        let reports = validate_predictors(6, 11).unwrap();
        for r in reports {
            assert!(r.passed, "{:?}", r);
        }
    }

    #[test]
    fn history_has_requested_length() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let hist = random_history(&mut rng, 2, 1e-3, 777, 1.0, 0.5);
        assert_eq!(hist.len(), 777);
    }
}
