//! Stability verdicts, dead-beat detection, critical-delay search and sweeps.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::controllers::{
    discrete_stability_check, input_delay_periods, measurement_delay_periods,
};
use crate::error::{Error, Result};
use crate::signals::{grid_steps, norm};
use crate::simulation::{run, ControllerSpec, RunStatus, Scenario, SimulationResult};

/// Smallest decay or growth rate (1/s) that counts as a verdict.
pub const RATE_MIN: f64 = 0.01;
/// Largest RMS residual of the log-linear fit that still yields a verdict.
pub const RESIDUAL_CAP: f64 = 0.5;
pub const DEFAULT_WINDOW_FRACTION: f64 = 0.5;
/// Minimum number of sampling periods in a classified trajectory.
pub const MIN_PERIODS: usize = 20;
/// Norms below this fraction of the peak are clamped before taking logs.
pub const RELATIVE_FLOOR: f64 = 1e-13;
/// Length of the sliding envelope, in sampling periods.
pub const ENVELOPE_PERIODS: usize = 5;
pub const DEFAULT_DEADBEAT_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StabilityClass {
    Converging,
    Diverging,
    Inconclusive,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StabilityVerdict {
    pub class: StabilityClass,
    /// Fitted exponent of the norm envelope (1/s).
    pub rate: f64,
    pub fit_window: (f64, f64),
    /// RMS residual of the log-linear fit.
    pub residual: f64,
}

/// Least-squares line through `(t, y)`; returns `(slope, rms residual)`.
fn fit_line(t: &[f64], y: &[f64]) -> (f64, f64) {
    let n = t.len() as f64;
    let tm = t.iter().sum::<f64>() / n;
    let ym = y.iter().sum::<f64>() / n;
    let sxx: f64 = t.iter().map(|t| (t - tm).powi(2)).sum();
    let sxy: f64 = t.iter().zip(y).map(|(t, y)| (t - tm) * (y - ym)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let ss: f64 = t
        .iter()
        .zip(y)
        .map(|(t, y)| (y - ym - slope * (t - tm)).powi(2))
        .sum();
    (slope, (ss / n).sqrt())
}

/// Classifies a norm series sampled on the uniform grid `t0 + k h`.
///
/// At each sampling instant the envelope is the largest norm over the
/// preceding five periods; a log-linear fit over the trailing
/// `window_fraction` of instants gives the rate. A series that collapses to
/// the floor is converging, with the rate fitted up to the collapse.
pub fn classify_stability(
    norms: &[f64],
    t0: f64,
    h: f64,
    period: f64,
    window_fraction: f64,
) -> Result<StabilityVerdict> {
    let n_t = grid_steps(period, h, "sampling.T")?;
    if n_t == 0 || !(window_fraction > 0.0 && window_fraction <= 1.0) {
        return Err(Error::Config(format!(
            "classification needs T > 0 and window fraction in (0, 1], got T = {period}, fraction = {window_fraction}"
        )));
    }
    let periods = norms.len().saturating_sub(1) / n_t;
    if periods < MIN_PERIODS {
        return Err(Error::TooShort {
            samples: periods,
            required: MIN_PERIODS,
        });
    }
    if norms.iter().any(|v| !v.is_finite()) {
        return Ok(StabilityVerdict {
            class: StabilityClass::Inconclusive,
            rate: f64::NAN,
            fit_window: (t0, t0 + periods as f64 * period),
            residual: f64::NAN,
        });
    }
    let times: Vec<f64> = (0..=periods).map(|k| t0 + k as f64 * period).collect();
    let envelope: Vec<f64> = (0..=periods)
        .map(|k| {
            let end = k * n_t;
            let start = end.saturating_sub(ENVELOPE_PERIODS * n_t);
            norms[start..=end].iter().copied().fold(0.0, f64::max)
        })
        .collect();
    let peak = norms.iter().copied().fold(0.0, f64::max);
    if peak == 0.0 {
        return Ok(StabilityVerdict {
            class: StabilityClass::Converging,
            rate: f64::NEG_INFINITY,
            fit_window: (t0, times[periods]),
            residual: 0.0,
        });
    }
    let floor = RELATIVE_FLOOR * peak;

    let collapsed = envelope[periods] <= floor;
    let last = if collapsed {
        envelope
            .iter()
            .position(|&e| e <= floor)
            .expect("collapse point exists")
    } else {
        periods
    };
    let first = ((last as f64) * (1.0 - window_fraction)).floor() as usize;
    let first = first.min(last.saturating_sub(2));
    let t = &times[first..=last];
    let logs: Vec<f64> = envelope[first..=last]
        .iter()
        .map(|e| e.max(floor).ln())
        .collect();
    let (rate, residual) = fit_line(t, &logs);
    let fit_window = (times[first], times[last]);

    let class = if collapsed {
        StabilityClass::Converging
    } else {
        let monotone = envelope[first..=last]
            .windows(2)
            .all(|w| w[1] <= w[0] * (1.0 + 1e-9));
        if residual > RESIDUAL_CAP {
            StabilityClass::Inconclusive
        } else if rate < -RATE_MIN && monotone {
            StabilityClass::Converging
        } else if rate > RATE_MIN {
            StabilityClass::Diverging
        } else {
            StabilityClass::Inconclusive
        }
    };
    Ok(StabilityVerdict {
        class,
        rate,
        fit_window,
        residual,
    })
}

/// Verdict for a norm series from a run with the given status. Truncated
/// runs that hit the overflow bound are diverging regardless of the fit;
/// non-finite runs are inconclusive.
pub fn classify_run(
    norms: &[f64],
    status: RunStatus,
    t0: f64,
    h: f64,
    period: f64,
    window_fraction: f64,
) -> Result<StabilityVerdict> {
    let fitted = classify_stability(norms, t0, h, period, window_fraction);
    let class = match status {
        RunStatus::Completed => return fitted,
        RunStatus::Diverged { .. } => StabilityClass::Diverging,
        RunStatus::NonFinite { .. } => StabilityClass::Inconclusive,
    };
    let end = match status {
        RunStatus::Diverged { t } | RunStatus::NonFinite { t } => t,
        RunStatus::Completed => unreachable!(),
    };
    let fitted = fitted.ok();
    Ok(StabilityVerdict {
        class,
        rate: fitted.map_or(f64::NAN, |v| v.rate),
        fit_window: fitted.map_or((t0, end), |v| v.fit_window),
        residual: fitted.map_or(f64::NAN, |v| v.residual),
    })
}

pub fn classify_result(res: &SimulationResult, window_fraction: f64) -> Result<StabilityVerdict> {
    classify_run(
        &res.state_norms(),
        res.status,
        res.t0,
        res.h,
        res.period,
        window_fraction,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DeadbeatReport {
    pub achieved: bool,
    /// First grid time after which the norm stays at or below the threshold.
    pub t_zero: Option<f64>,
    pub bound: f64,
    pub threshold: f64,
}

/// Dead-beat check on a norm series over the grid `t0 + k h`; `bound` is an
/// absolute time.
pub fn detect_deadbeat(
    norms: &[f64],
    t0: f64,
    h: f64,
    threshold: f64,
    bound: f64,
) -> DeadbeatReport {
    let t_zero = match norms.iter().rposition(|&v| !(v <= threshold)) {
        None if norms.is_empty() => None,
        None => Some(t0),
        Some(k) if k + 1 < norms.len() => Some(t0 + (k + 1) as f64 * h),
        Some(_) => None,
    };
    DeadbeatReport {
        achieved: t_zero.is_some_and(|t| t <= bound + h * (1.0 + 1e-9)),
        t_zero,
        bound,
        threshold,
    }
}

/// Largest initial magnitude over the state and input segments; 1 if both vanish.
pub fn initial_scale(res: &SimulationResult) -> f64 {
    let input = (0..res.plan.n_r + res.plan.n_tau)
        .filter_map(|k| res.u.node(k))
        .map(norm)
        .fold(0.0, f64::max);
    scale_or_one(res.initial_sup_norm().max(input))
}

pub(crate) fn scale_or_one(scale: f64) -> f64 {
    if scale > 0.0 {
        scale
    } else {
        1.0
    }
}

/// Dead-beat report with the threshold relative to `scale`; runs that did
/// not complete never count as dead-beat.
pub fn deadbeat_run(
    norms: &[f64],
    status: RunStatus,
    scale: f64,
    t0: f64,
    h: f64,
    eps: f64,
    bound_offset: f64,
) -> DeadbeatReport {
    let mut report = detect_deadbeat(norms, t0, h, eps * scale, t0 + bound_offset);
    if status != RunStatus::Completed {
        report.achieved = false;
        report.t_zero = None;
    }
    report
}

/// Dead-beat report for a run, with the threshold relative to its initial data.
pub fn deadbeat_report(res: &SimulationResult, eps: f64, bound_offset: f64) -> DeadbeatReport {
    deadbeat_run(
        &res.state_norms(),
        res.status,
        initial_scale(res),
        res.t0,
        res.h,
        eps,
        bound_offset,
    )
}

/// Order `j` of the nominal law for the built-in dead-beat designs.
pub fn default_deadbeat_order(s: &Scenario) -> Option<usize> {
    match s.controller {
        ControllerSpec::Deci { .. } => Some(s.plant.n()),
        ControllerSpec::UnicycleZoh { .. } => Some(3),
        _ => None,
    }
}

/// Predicted dead-beat time after `t0` for a ZOH law of order `j`:
/// `(j + l + q + 1) T` with `l = τ/T`, `q = ⌊r/T⌋`, or `j T` without delays.
pub fn deadbeat_bound(s: &Scenario, order: usize) -> Result<f64> {
    if s.r + s.tau == 0.0 {
        return Ok(order as f64 * s.period);
    }
    let l = input_delay_periods(s.tau, s.period, s.h)?;
    let q = measurement_delay_periods(s.r, s.period);
    Ok((order + l + q + 1) as f64 * s.period)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Probe {
    pub r: f64,
    pub status: RunStatus,
    pub verdict: StabilityVerdict,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CriticalDelay {
    pub r_stable: f64,
    pub r_unstable: f64,
    pub probes: Vec<Probe>,
}

fn probe(template: &Scenario, r: f64, window_fraction: f64) -> Result<Probe> {
    let mut s = template.clone();
    s.r = r;
    let res = run(&s)?;
    Ok(Probe {
        r,
        status: res.status,
        verdict: classify_result(&res, window_fraction)?,
    })
}

/// Bisection on the measurement delay. The endpoints must classify
/// converging and diverging; interior probes are decided by the sign of the
/// fitted rate so that the bracket keeps shrinking near the boundary, where
/// rates are too small for a strict verdict.
pub fn find_critical_delay(
    template: &Scenario,
    r_lo: f64,
    r_hi: f64,
    tol: f64,
    window_fraction: f64,
) -> Result<CriticalDelay> {
    let h = template.h;
    if !(tol >= 2.0 * h * (1.0 - 1e-9)) {
        return Err(Error::Config(format!(
            "tol must be at least 2h = {}",
            2.0 * h
        )));
    }
    let snap = |r: f64| (r / h).round() * h;
    let (mut lo, mut hi) = (snap(r_lo), snap(r_hi));
    if lo > hi || lo < 0.0 {
        return Err(Error::BracketInvalid(format!(
            "need 0 <= r_lo <= r_hi, got [{r_lo}, {r_hi}]"
        )));
    }
    if lo == hi {
        return Ok(CriticalDelay {
            r_stable: lo,
            r_unstable: hi,
            probes: Vec::new(),
        });
    }
    let mut probes = Vec::new();
    let low = probe(template, lo, window_fraction)?;
    probes.push(low);
    if low.verdict.class != StabilityClass::Converging {
        return Err(Error::BracketInvalid(format!(
            "r = {lo} classifies {:?}, expected converging",
            low.verdict.class
        )));
    }
    let high = probe(template, hi, window_fraction)?;
    probes.push(high);
    if high.verdict.class != StabilityClass::Diverging {
        return Err(Error::BracketInvalid(format!(
            "r = {hi} classifies {:?}, expected diverging",
            high.verdict.class
        )));
    }
    while hi - lo > tol {
        let mid = snap(0.5 * (lo + hi));
        if mid <= lo || mid >= hi {
            break;
        }
        let p = probe(template, mid, window_fraction)?;
        probes.push(p);
        let unstable = matches!(p.status, RunStatus::Diverged { .. }) || p.verdict.rate > 0.0;
        if unstable {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(CriticalDelay {
        r_stable: lo,
        r_unstable: hi,
        probes,
    })
}

/// Scenario parameters a sweep can vary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum SweepParam {
    #[serde(rename = "delays.r")]
    R,
    #[serde(rename = "delays.tau")]
    Tau,
    #[serde(rename = "sampling.T")]
    Period,
    #[serde(rename = "horizon")]
    Horizon,
}

impl SweepParam {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "delays.r" => Ok(Self::R),
            "delays.tau" => Ok(Self::Tau),
            "sampling.T" => Ok(Self::Period),
            "horizon" => Ok(Self::Horizon),
            other => Err(Error::Config(format!(
                "unknown sweep parameter '{other}' (expected delays.r, delays.tau, sampling.T or horizon)"
            ))),
        }
    }

    pub fn apply(self, s: &mut Scenario, value: f64) {
        match self {
            Self::R => s.r = value,
            Self::Tau => s.tau = value,
            Self::Period => s.period = value,
            Self::Horizon => s.horizon = value,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepPoint {
    pub value: f64,
    pub status: Option<RunStatus>,
    pub verdict: Option<StabilityVerdict>,
    pub error: Option<String>,
}

/// `steps + 1` values evenly spaced over `[from, to]`, snapped to the grid.
pub fn sweep_values(from: f64, to: f64, steps: usize, h: f64) -> Vec<f64> {
    if steps == 0 {
        return vec![(from / h).round() * h];
    }
    (0..=steps)
        .map(|k| {
            let v = from + (to - from) * k as f64 / steps as f64;
            (v / h).round() * h
        })
        .collect()
}

/// Runs one scenario per value in parallel; results keep the input order.
pub fn sweep(
    template: &Scenario,
    param: SweepParam,
    values: &[f64],
    window_fraction: f64,
) -> Vec<SweepPoint> {
    values
        .par_iter()
        .map(|&value| {
            let mut s = template.clone();
            param.apply(&mut s, value);
            match run(&s).and_then(|res| Ok((res.status, classify_result(&res, window_fraction)?)))
            {
                Ok((status, verdict)) => SweepPoint {
                    value,
                    status: Some(status),
                    verdict: Some(verdict),
                    error: None,
                },
                Err(e) => SweepPoint {
                    value,
                    status: None,
                    verdict: None,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect()
}

/// Sampling period in `[lo, hi]` at which the spectral radius of the
/// sampled loop crosses one, by bisection to `tol`.
pub fn critical_sampling_period(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    k: &DMatrix<f64>,
    lo: f64,
    hi: f64,
    tol: f64,
) -> Result<f64> {
    let stable = |t: f64| discrete_stability_check(a, b, k, t).map(|rho| rho < 1.0);
    let (mut lo, mut hi) = (lo, hi);
    let lo_stable = stable(lo)?;
    if lo_stable == stable(hi)? {
        return Err(Error::BracketInvalid(format!(
            "spectral radius does not cross 1 on [{lo}, {hi}]"
        )));
    }
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if stable(mid)? == lo_stable {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plants::PlantModel;
    use crate::simulation::InitialSegment;

    fn series(rate: f64, h: f64, len: f64) -> Vec<f64> {
        let n = (len / h).round() as usize;
        (0..=n).map(|k| (rate * k as f64 * h).exp()).collect()
    }

    #[test]
    fn synthetic_decay() {
        let v = classify_stability(&series(-1.0, 1e-2, 40.0), 0.0, 1e-2, 1.0, 0.5).unwrap();
        assert_eq!(v.class, StabilityClass::Converging);
        assert!((v.rate + 1.0).abs() < 0.05);
    }

    #[test]
    fn synthetic_growth() {
        let v = classify_stability(&series(0.5, 1e-2, 40.0), 0.0, 1e-2, 1.0, 0.5).unwrap();
        assert_eq!(v.class, StabilityClass::Diverging);
        assert!((v.rate - 0.5).abs() < 0.05);
    }

    #[test]
    fn flat_series_is_inconclusive() {
        let v = classify_stability(&series(0.0, 1e-2, 40.0), 0.0, 1e-2, 1.0, 0.5).unwrap();
        assert_eq!(v.class, StabilityClass::Inconclusive);
    }

    #[test]
    fn short_series_is_rejected() {
        let err = classify_stability(&series(-1.0, 1e-2, 10.0), 0.0, 1e-2, 1.0, 0.5).unwrap_err();
        assert!(matches!(
            err,
            Error::TooShort {
                samples: 10,
                required: 20
            }
        ));
    }

    #[test]
    fn collapse_counts_as_converging() {
        let mut v = series(-0.3, 1e-2, 40.0);
        for x in v.iter_mut().skip(500) {
            *x = 0.0;
        }
        let verdict = classify_stability(&v, 0.0, 1e-2, 1.0, 0.5).unwrap();
        assert_eq!(verdict.class, StabilityClass::Converging);
        assert!(verdict.rate < 0.0);
    }

    #[test]
    fn deadbeat_detection() {
        let norms = [3.0, 2.0, 1.0, 0.0, 0.0, 0.0];
        let r = detect_deadbeat(&norms, 0.0, 0.5, 1e-6, 1.5);
        assert_eq!(r.t_zero, Some(1.5));
        assert!(r.achieved);
        let late = detect_deadbeat(&norms, 0.0, 0.5, 1e-6, 0.9);
        assert!(!late.achieved);
        let never = detect_deadbeat(&[1.0, 0.0, 1.0], 0.0, 0.5, 1e-6, 10.0);
        assert_eq!(never.t_zero, None);
        assert!(!never.achieved);
    }

    #[test]
    fn degenerate_bracket_runs_nothing() {
        let s = Scenario::new(
            PlantModel::Scalar,
            ControllerSpec::Uncompensated {
                k: DMatrix::from_element(1, 1, -2.0),
            },
            0.2,
            0.0,
            1.0,
            100.0,
        );
        let c = find_critical_delay(&s, 0.2, 0.2, 0.005, 0.5).unwrap();
        assert_eq!((c.r_stable, c.r_unstable), (0.2, 0.2));
        assert!(c.probes.is_empty());
    }

    #[test]
    fn compensated_loop_has_no_bracket() {
        let mut s = Scenario::new(
            PlantModel::Scalar,
            ControllerSpec::Zoh {
                feedback: crate::controllers::NominalFeedback::linear(DMatrix::from_element(
                    1, 1, -2.0,
                )),
                predictor: crate::predictors::PredictorKind::Lti,
            },
            0.1,
            0.0,
            1.0,
            40.0,
        );
        s.h = 1e-2;
        s.x0 = InitialSegment::Constant(vec![1.0]);
        let err = find_critical_delay(&s, 0.1, 0.9, 0.05, 0.5).unwrap_err();
        assert!(matches!(err, Error::BracketInvalid(_)));
    }

    #[test]
    fn sweep_preserves_order() {
        let mut s = Scenario::new(
            PlantModel::Scalar,
            ControllerSpec::Uncompensated {
                k: DMatrix::from_element(1, 1, -2.0),
            },
            0.0,
            0.0,
            1.0,
            30.0,
        );
        s.h = 1e-2;
        s.x0 = InitialSegment::Constant(vec![1.0]);
        let values = sweep_values(0.0, 0.5, 5, s.h);
        let out = sweep(&s, SweepParam::R, &values, 0.5);
        let got: Vec<f64> = out.iter().map(|p| p.value).collect();
        assert_eq!(got, values);
        assert_eq!(out[0].verdict.unwrap().class, StabilityClass::Converging);
        assert_eq!(out[5].verdict.unwrap().class, StabilityClass::Diverging);
    }

    #[test]
    fn deadbeat_bounds() {
        let mut s = Scenario::new(
            PlantModel::Unicycle,
            ControllerSpec::UnicycleZoh {
                hold: Default::default(),
            },
            0.7,
            1.0,
            0.5,
            10.0,
        );
        assert!((deadbeat_bound(&s, 3).unwrap() - 3.5).abs() < 1e-12);
        s.r = 0.0;
        s.tau = 0.0;
        assert_eq!(deadbeat_bound(&s, 2).unwrap(), 1.0);
    }
}
