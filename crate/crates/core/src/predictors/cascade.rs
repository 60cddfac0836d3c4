use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::plants::{IntegratorConfig, PlantModel};
use crate::signals::InputHistory;

use super::{check_len, half_step, simpson};

/// Stage function of `(u, lower)`, where `lower` lists the values of the
/// previously solved stages in stage order.
pub type StageFn = Arc<dyn Fn(&[f64], &[f64]) -> f64 + Send + Sync>;

/// One stage `ẋ_target = a(u, lower) x_target + f(u, lower)`.
#[derive(Clone)]
pub struct CascadeStage {
    pub target: usize,
    pub a: StageFn,
    pub f: StageFn,
}

impl CascadeStage {
    pub fn new(
        target: usize,
        a: impl Fn(&[f64], &[f64]) -> f64 + Send + Sync + 'static,
        f: impl Fn(&[f64], &[f64]) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self {
            target,
            a: Arc::new(a),
            f: Arc::new(f),
        }
    }
}

impl fmt::Debug for CascadeStage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CascadeStage")
            .field("target", &self.target)
            .finish_non_exhaustive()
    }
}

/// Triangular decomposition of a catalog plant, if it has one.
pub fn catalog_stages(plant: &PlantModel) -> Option<Vec<CascadeStage>> {
    let zero = |_: &[f64], _: &[f64]| 0.0;
    Some(match plant {
        PlantModel::Scalar => vec![CascadeStage::new(0, |_, _| 1.0, |u, _| u[0])],
        PlantModel::Feedforward3d => vec![
            CascadeStage::new(2, zero, |u, _| u[0]),
            CascadeStage::new(1, zero, |u, lo| lo[0] * (1.0 + u[0])),
            CascadeStage::new(0, zero, |_, lo| lo[1] + lo[0] * lo[0]),
        ],
        PlantModel::Nonholonomic => vec![
            CascadeStage::new(0, zero, |u, _| u[0]),
            CascadeStage::new(2, zero, |u, _| u[1]),
            CascadeStage::new(1, zero, |u, lo| lo[0] * u[1]),
        ],
        PlantModel::StrictFeedforward2d { p } => {
            let p = p.clone();
            vec![
                CascadeStage::new(1, zero, |u, _| u[0]),
                CascadeStage::new(0, zero, move |u, lo| lo[0] + p.eval(lo[0]) * u[0]),
            ]
        }
        PlantModel::Unicycle => vec![
            CascadeStage::new(2, zero, |u, _| u[1]),
            CascadeStage::new(0, zero, |u, lo| u[0] * lo[0].cos()),
            CascadeStage::new(1, zero, |u, lo| u[0] * lo[0].sin()),
        ],
        PlantModel::Bilinear { a, b, c } if a.nrows() == 1 => {
            let (a, b, c) = (a[(0, 0)], b[(0, 0)], c[(0, 0)]);
            vec![CascadeStage::new(
                0,
                move |u, _| a + c * u[0],
                move |u, _| b * u[0],
            )]
        }
        _ => return None,
    })
}

/// Largest exponent accepted for the integrating factor.
const MAX_EXPONENT: f64 = 700.0;

/// Solves the stages in order. Stage `i` is the scalar linear ODE
/// `ẋ = a x + f` along the window: with `G = ∫a`, `x = exp(G)(x₀ + ∫exp(-G) f)`.
/// Both integrals use per-step Simpson; values at step midpoints come from the
/// half-step rule, so every stage is tabulated at nodes and midpoints for the
/// stages above it.
pub fn cascade_predict(
    stages: &[CascadeStage],
    x: &[f64],
    hist: &InputHistory,
    cfg: &IntegratorConfig,
) -> Result<Vec<f64>> {
    let n = x.len();
    check_len(stages.len(), n)?;
    let mut seen = vec![false; n];
    for s in stages {
        if s.target >= n || seen[s.target] {
            return Err(Error::Config(format!(
                "cascade stages must cover each state once (bad target {})",
                s.target
            )));
        }
        seen[s.target] = true;
    }
    let h = hist.h();
    let len = hist.len();
    // solved stage values, stage-major: nodes[i][j], mids[i][j]
    let mut nodes: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut mids: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut lower = Vec::with_capacity(n);
    let mut g_node = vec![0.0; len + 1];
    let mut g_mid = vec![0.0; len];
    let mut a_vals = vec![[0.0; 3]; len];
    let mut f_vals = vec![[0.0; 3]; len];
    let overflow = Error::ForwardCompletenessViolated {
        bound: cfg.overflow_bound,
    };

    for (i, stage) in stages.iter().enumerate() {
        let gather = |lower: &mut Vec<f64>, table: &Vec<Vec<f64>>, j: usize| {
            lower.clear();
            lower.extend(table.iter().take(i).map(|col| col[j]));
        };
        for j in 0..len {
            let seg = hist.segment(j);
            gather(&mut lower, &nodes, j);
            a_vals[j][0] = (stage.a)(seg.left, &lower);
            f_vals[j][0] = (stage.f)(seg.left, &lower);
            gather(&mut lower, &mids, j);
            a_vals[j][1] = (stage.a)(seg.mid, &lower);
            f_vals[j][1] = (stage.f)(seg.mid, &lower);
            gather(&mut lower, &nodes, j + 1);
            a_vals[j][2] = (stage.a)(seg.right, &lower);
            f_vals[j][2] = (stage.f)(seg.right, &lower);
        }
        for j in 0..len {
            let [l, m, r] = a_vals[j];
            g_mid[j] = g_node[j] + half_step(h, l, m, r);
            g_node[j + 1] = g_node[j] + simpson(h, l, m, r);
        }
        if g_node
            .iter()
            .chain(g_mid.iter())
            .any(|g| !g.is_finite() || g.abs() > MAX_EXPONENT)
        {
            return Err(overflow);
        }
        let x0 = x[stage.target];
        let mut col_node = vec![0.0; len + 1];
        let mut col_mid = vec![0.0; len];
        col_node[0] = x0;
        let mut acc = 0.0;
        for j in 0..len {
            let [fl, fm, fr] = f_vals[j];
            let l = (-g_node[j]).exp() * fl;
            let m = (-g_mid[j]).exp() * fm;
            let r = (-g_node[j + 1]).exp() * fr;
            col_mid[j] = g_mid[j].exp() * (x0 + acc + half_step(h, l, m, r));
            acc += simpson(h, l, m, r);
            col_node[j + 1] = g_node[j + 1].exp() * (x0 + acc);
        }
        if col_node
            .iter()
            .chain(col_mid.iter())
            .any(|v| !v.is_finite() || v.abs() > cfg.overflow_bound)
        {
            return Err(overflow);
        }
        nodes.push(col_node);
        mids.push(col_mid);
    }
    let mut out = vec![0.0; n];
    for (stage, col) in stages.iter().zip(&nodes) {
        out[stage.target] = col[len];
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pure_integrator_stage() {
        let stages = [CascadeStage::new(0, |_, _| 0.0, |u, _| u[0])];
        let hist = InputHistory::from_values(1, 0.01, &[[1.0], [2.0], [-0.5], [4.0]]);
        let x = cascade_predict(&stages, &[0.3], &hist, &IntegratorConfig::default()).unwrap();
        assert!((x[0] - (0.3 + 0.01 * 6.5)).abs() < 1e-15);
    }

    #[test]
    fn multiplicative_stage() {
        let stages = [CascadeStage::new(0, |u, _| u[0], |_, _| 0.0)];
        let (c, d) = (0.6, 1.5);
        let hist = InputHistory::constant(&[c], 1e-3, 1500);
        let x = cascade_predict(&stages, &[2.0], &hist, &IntegratorConfig::default()).unwrap();
        assert!((x[0] - 2.0 * (c * d).exp()).abs() < 1e-12);
    }

    #[test]
    fn exponent_guard() {
        let stages = [CascadeStage::new(0, |u, _| u[0], |_, _| 0.0)];
        let hist = InputHistory::constant(&[1000.0], 1e-3, 1000);
        let err = cascade_predict(&stages, &[1.0], &hist, &IntegratorConfig::default());
        assert!(matches!(
            err,
            Err(Error::ForwardCompletenessViolated { .. })
        ));
    }

    #[test]
    fn rejects_incomplete_stage_list() {
        let stages = [
            CascadeStage::new(0, |_, _| 0.0, |u, _| u[0]),
            CascadeStage::new(0, |_, _| 0.0, |u, _| u[0]),
        ];
        let hist = InputHistory::constant(&[1.0], 1e-3, 10);
        assert!(
            cascade_predict(&stages, &[0.0, 0.0], &hist, &IntegratorConfig::default()).is_err()
        );
    }
}
