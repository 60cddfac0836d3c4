use crate::error::Result;
use crate::plants::{integrate_segment, IntegratorConfig, PlantModel};
use crate::signals::InputHistory;

use super::check_len;

/// Integrates the plant across the history, one RK4 step per stored
/// micro-step. The step size is the history's own `h`; `cfg` supplies the
/// overflow bound.
pub fn numeric_predict(
    model: &PlantModel,
    x: &[f64],
    hist: &InputHistory,
    cfg: &IntegratorConfig,
) -> Result<Vec<f64>> {
    check_len(x.len(), model.n())?;
    check_len(hist.dim(), model.m())?;
    let step = IntegratorConfig {
        h: hist.h(),
        overflow_bound: cfg.overflow_bound,
    };
    let mut state = x.to_vec();
    for j in 0..hist.len() {
        state = integrate_segment(model, &state, hist.segment(j), &step)?;
    }
    Ok(state)
}
