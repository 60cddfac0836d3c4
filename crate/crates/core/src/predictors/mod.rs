//! Predictor mappings: from the delayed measurement `x(t - r)` and the open
//! input history on `[t - r - τ, t)` to the predicted state `x(t + τ)`.
//!
//! [`numeric_predict`] integrates the plant over the window and serves as the
//! oracle for every closed form. The closed forms cover linear, commuting
//! bilinear, triangular (cascade) plants, the three-state feedforward example
//! and the unicycle.

mod bilinear;
mod cascade;
mod feedforward3d;
mod lti;
mod numeric;
mod unicycle;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub(crate) use crate::error::check_len;
use crate::error::{Error, Result};
use crate::plants::{IntegratorConfig, PlantModel};
use crate::signals::{grid_steps, InputHistory};

pub use bilinear::{bilinear_predict, check_commuting};
pub use cascade::{cascade_predict, catalog_stages, CascadeStage, StageFn};
pub use feedforward3d::feedforward3d_predict;
pub use lti::lti_predict;
pub use numeric::numeric_predict;
pub use unicycle::unicycle_predict;

/// Composite Simpson over one micro-step from its left, middle and right values.
pub(crate) fn simpson(h: f64, l: f64, m: f64, r: f64) -> f64 {
    h / 6.0 * (l + 4.0 * m + r)
}

/// Integral over the first half of a micro-step of the quadratic through the
/// left, middle and right values.
pub(crate) fn half_step(h: f64, l: f64, m: f64, r: f64) -> f64 {
    h / 24.0 * (5.0 * l + 8.0 * m - r)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictorKind {
    Numeric,
    Lti,
    Bilinear,
    Cascade,
    Feedforward3d,
    Unicycle,
}

impl PredictorKind {
    pub const ALL: [PredictorKind; 6] = [
        Self::Numeric,
        Self::Lti,
        Self::Bilinear,
        Self::Cascade,
        Self::Feedforward3d,
        Self::Unicycle,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Numeric => "numeric",
            Self::Lti => "lti",
            Self::Bilinear => "bilinear",
            Self::Cascade => "cascade",
            Self::Feedforward3d => "feedforward3d",
            Self::Unicycle => "unicycle",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s)
    }

    /// Closed form matching the plant, or the numeric fallback.
    pub fn preferred_for(plant: &PlantModel) -> Self {
        match plant {
            PlantModel::Scalar | PlantModel::Lti(_) => Self::Lti,
            PlantModel::Bilinear { .. } => Self::Bilinear,
            PlantModel::Feedforward3d => Self::Feedforward3d,
            PlantModel::Unicycle => Self::Unicycle,
            PlantModel::Nonholonomic | PlantModel::StrictFeedforward2d { .. } => Self::Cascade,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PredictorSpec {
    pub kind: PredictorKind,
    pub r: f64,
    pub tau: f64,
}

/// A predictor bound to a plant and a delay pair.
#[derive(Debug, Clone)]
pub struct Predictor {
    spec: PredictorSpec,
    plant: PlantModel,
    cfg: IntegratorConfig,
    steps: usize,
    stages: Option<Arc<Vec<CascadeStage>>>,
}

impl Predictor {
    pub fn new(spec: PredictorSpec, plant: &PlantModel, cfg: IntegratorConfig) -> Result<Self> {
        if !(spec.r >= 0.0 && spec.tau >= 0.0) {
            return Err(Error::Config(format!(
                "delays must be non-negative, got r={} tau={}",
                spec.r, spec.tau
            )));
        }
        let steps = grid_steps(spec.r + spec.tau, cfg.h, "r + tau")?;
        let mismatch = || {
            Error::Config(format!(
                "predictor '{}' does not apply to plant '{}'",
                spec.kind.name(),
                plant.id()
            ))
        };
        let mut stages = None;
        match spec.kind {
            PredictorKind::Numeric => {}
            PredictorKind::Lti => {
                if !matches!(plant, PlantModel::Scalar | PlantModel::Lti(_)) {
                    return Err(mismatch());
                }
            }
            PredictorKind::Bilinear => match plant {
                PlantModel::Bilinear { a, c, .. } => check_commuting(a, c)?,
                _ => return Err(mismatch()),
            },
            PredictorKind::Cascade => {
                stages = Some(Arc::new(catalog_stages(plant).ok_or_else(mismatch)?));
            }
            PredictorKind::Feedforward3d => {
                if *plant != PlantModel::Feedforward3d {
                    return Err(mismatch());
                }
            }
            PredictorKind::Unicycle => {
                if *plant != PlantModel::Unicycle {
                    return Err(mismatch());
                }
            }
        }
        Ok(Self {
            spec,
            plant: plant.clone(),
            cfg,
            steps,
            stages,
        })
    }

    pub fn spec(&self) -> &PredictorSpec {
        &self.spec
    }

    /// Number of micro-steps in the input window.
    pub fn window_steps(&self) -> usize {
        self.steps
    }

    pub fn predict(&self, x: &[f64], hist: &InputHistory) -> Result<Vec<f64>> {
        check_len(x.len(), self.plant.n())?;
        check_len(hist.dim(), self.plant.m())?;
        check_len(hist.len(), self.steps)?;
        if self.steps == 0 {
            return Ok(x.to_vec());
        }
        let out = match self.spec.kind {
            PredictorKind::Numeric => numeric_predict(&self.plant, x, hist, &self.cfg)?,
            PredictorKind::Lti => match &self.plant {
                PlantModel::Lti(p) => lti_predict(&p.a, &p.b, x, hist)?,
                _ => {
                    let one = nalgebra::DMatrix::from_element(1, 1, 1.0);
                    lti_predict(&one, &one, x, hist)?
                }
            },
            PredictorKind::Bilinear => match &self.plant {
                PlantModel::Bilinear { a, b, c } => bilinear_predict(a, b, c, x, hist)?,
                _ => unreachable!("checked at construction"),
            },
            PredictorKind::Cascade => {
                let stages = self.stages.as_ref().expect("checked at construction");
                cascade_predict(stages, x, hist, &self.cfg)?
            }
            PredictorKind::Feedforward3d => feedforward3d_predict(x, hist)?,
            PredictorKind::Unicycle => unicycle_predict(x, hist)?,
        };
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteValue {
                context: "predictor output",
            });
        }
        Ok(out)
    }
}
