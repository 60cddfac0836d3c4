//! Closed-loop engine: plant, delays, sampling schedule and controller on one
//! uniform grid.
//!
//! Grid bookkeeping uses step indices only. With `g` counting micro-steps from
//! `t0`, the state signal stores `x(t0 + g h)` at index `n_r + g` and the
//! controller-output signal stores `u(t0 + g h)` at index `n_r + n_τ + g`, so
//! the plant at step `g` reads the input segment at index `n_r + g`, which is
//! the output recorded at `t - τ`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::controllers::{
    chain_of_integrators, deadbeat_chain_gain, input_delay_periods, unicycle_pose_feedback,
    DeciController, DynamicController, InputRingBuffer, LtiNetworked, NetworkedWeights,
    NominalFeedback, Theta, Uncompensated, UnicycleHold, UnicycleZoh, ZohController,
};
use crate::error::{check_len, Error, Result};
use crate::plants::{integrate_segment, IntegratorConfig, PlantModel};
use crate::predictors::{Predictor, PredictorKind, PredictorSpec};
use crate::signals::{
    grid_steps, norm, InputHistory, Interpolation, SampledSignal, Segment, TimeGrid,
};

/// Initial data on `[t0 - r, t0]` (state) or `[t0 - r - τ, t0)` (input).
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialSegment {
    Constant(Vec<f64>),
    /// `(θ, value)` pairs with `θ ≤ 0` relative to `t0`, sorted by `θ`.
    Table(Vec<(f64, Vec<f64>)>),
}

impl InitialSegment {
    pub fn dim(&self) -> usize {
        match self {
            Self::Constant(v) => v.len(),
            Self::Table(points) => points.first().map_or(0, |p| p.1.len()),
        }
    }

    fn validate(&self, dim: usize, what: &str) -> Result<()> {
        match self {
            Self::Constant(v) => check_len(v.len(), dim),
            Self::Table(points) => {
                if points.is_empty() {
                    return Err(Error::Config(format!(
                        "{what}: table needs at least one point"
                    )));
                }
                for w in points.windows(2) {
                    if !(w[0].0 < w[1].0) {
                        return Err(Error::Config(format!("{what}: table times must increase")));
                    }
                }
                for (theta, v) in points {
                    check_len(v.len(), dim)?;
                    if !theta.is_finite() || v.iter().any(|x| !x.is_finite()) {
                        return Err(Error::Config(format!(
                            "{what}: table entries must be finite"
                        )));
                    }
                }
                Ok(())
            }
        }
    }

    /// Linear interpolation, clamped at the table ends.
    pub fn state_at(&self, theta: f64) -> Vec<f64> {
        match self {
            Self::Constant(v) => v.clone(),
            Self::Table(points) => {
                let j = points.partition_point(|p| p.0 <= theta);
                if j == 0 {
                    return points[0].1.clone();
                }
                if j == points.len() {
                    return points[j - 1].1.clone();
                }
                let (ta, a) = (&points[j - 1].0, &points[j - 1].1);
                let (tb, b) = (&points[j].0, &points[j].1);
                let lambda = (theta - ta) / (tb - ta);
                a.iter().zip(b).map(|(a, b)| a + lambda * (b - a)).collect()
            }
        }
    }

    /// Hold-left: the value of the last point at or before `θ`.
    pub fn input_at(&self, theta: f64) -> Vec<f64> {
        match self {
            Self::Constant(v) => v.clone(),
            Self::Table(points) => {
                let j = points.partition_point(|p| p.0 <= theta + 1e-12);
                points[j.saturating_sub(1)].1.clone()
            }
        }
    }
}

#[derive(Debug, Clone)]
pub enum ControllerSpec {
    /// Sampled-data dynamic controller with continuous output.
    Dynamic {
        feedback: NominalFeedback,
        predictor: PredictorKind,
    },
    /// Predictor feedback applied with zero-order hold.
    Zoh {
        feedback: NominalFeedback,
        predictor: PredictorKind,
    },
    /// Linear networked recursion with gain `K` (`m × n`).
    LtiNetworked { k: DMatrix<f64> },
    /// Chain-of-integrators design; `k = None` selects the dead-beat gain.
    Deci { k: Option<DMatrix<f64>> },
    /// Region law for the vehicle, recomputed at each sampling instant.
    UnicycleZoh { hold: UnicycleHold },
    /// Dynamic controller for the vehicle; `feedback` stabilizes the
    /// nonholonomic integrator in chained coordinates.
    UnicycleDynamic { feedback: NominalFeedback },
    /// `u_i = K y_i` without compensation.
    Uncompensated { k: DMatrix<f64> },
}

impl ControllerSpec {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Dynamic { .. } => "dynamic",
            Self::Zoh { .. } => "zoh",
            Self::LtiNetworked { .. } => "lti_networked",
            Self::Deci { .. } => "deci",
            Self::UnicycleZoh { .. } => "unicycle_zoh",
            Self::UnicycleDynamic { .. } => "unicycle_dynamic",
            Self::Uncompensated { .. } => "uncompensated",
        }
    }

    /// Whether the law holds its output between sampling instants.
    pub fn is_zoh(&self) -> bool {
        !matches!(self, Self::Dynamic { .. } | Self::UnicycleDynamic { .. })
    }

    /// Whether the law requires `τ = l T`.
    pub fn needs_aligned_tau(&self) -> bool {
        matches!(
            self,
            Self::Zoh { .. }
                | Self::LtiNetworked { .. }
                | Self::Deci { .. }
                | Self::UnicycleZoh { .. }
        )
    }
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub plant: PlantModel,
    pub controller: ControllerSpec,
    pub r: f64,
    pub tau: f64,
    pub period: f64,
    pub t0: f64,
    pub h: f64,
    pub horizon: f64,
    pub x0: InitialSegment,
    pub u0: InitialSegment,
    pub z0: Option<Vec<f64>>,
    pub overflow_bound: f64,
}

impl Scenario {
    /// Scenario with `t0 = 0`, `h = 1e-3` and zero initial data.
    pub fn new(
        plant: PlantModel,
        controller: ControllerSpec,
        r: f64,
        tau: f64,
        period: f64,
        horizon: f64,
    ) -> Self {
        let (n, m) = (plant.n(), plant.m());
        Self {
            plant,
            controller,
            r,
            tau,
            period,
            t0: 0.0,
            h: IntegratorConfig::DEFAULT_H,
            horizon,
            x0: InitialSegment::Constant(vec![0.0; n]),
            u0: InitialSegment::Constant(vec![0.0; m]),
            z0: None,
            overflow_bound: IntegratorConfig::DEFAULT_OVERFLOW,
        }
    }

    pub fn integrator(&self) -> IntegratorConfig {
        IntegratorConfig {
            h: self.h,
            overflow_bound: self.overflow_bound,
        }
    }

    /// Checks the scenario invariants and converts durations to step counts.
    pub fn plan(&self) -> Result<Plan> {
        if !(self.h > 0.0) || !self.h.is_finite() {
            return Err(Error::Config(format!(
                "integrator.h must be positive, got {}",
                self.h
            )));
        }
        if !self.t0.is_finite() {
            return Err(Error::Config("sampling.t0 must be finite".into()));
        }
        let n_r = grid_steps(self.r, self.h, "delays.r")?;
        let n_tau = grid_steps(self.tau, self.h, "delays.tau")?;
        let n_t = grid_steps(self.period, self.h, "sampling.T")?;
        let n_h = grid_steps(self.horizon, self.h, "horizon")?;
        if n_t == 0 {
            return Err(Error::Config("sampling.T must be positive".into()));
        }
        if self.controller.needs_aligned_tau() {
            input_delay_periods(self.tau, self.period, self.h)?;
        }
        self.x0.validate(self.plant.n(), "init.state")?;
        self.u0.validate(self.plant.m(), "init.input")?;
        if let Some(z0) = &self.z0 {
            check_len(z0.len(), self.plant.n())?;
        }
        Ok(Plan {
            n_r,
            n_tau,
            n_t,
            n_h,
        })
    }
}

/// Step counts of a validated scenario.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Plan {
    pub n_r: usize,
    pub n_tau: usize,
    pub n_t: usize,
    pub n_h: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Event {
    pub i: usize,
    pub t: f64,
    pub y: Vec<f64>,
    pub phi: Vec<f64>,
    pub u: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    Diverged { t: f64 },
    NonFinite { t: f64 },
}

impl RunStatus {
    pub fn label(&self) -> &'static str {
        match self {
            Self::Completed => "completed",
            Self::Diverged { .. } => "diverged",
            Self::NonFinite { .. } => "non_finite",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulationResult {
    pub t0: f64,
    pub h: f64,
    pub period: f64,
    pub r: f64,
    pub tau: f64,
    pub plan: Plan,
    /// State on `[t0 - r, t0 + horizon]`.
    pub x: SampledSignal,
    /// Controller output on `[t0 - r - τ, t0 + horizon)`.
    pub u: SampledSignal,
    /// Observer state on `[t0, t0 + horizon]` (dynamic controllers).
    pub z: Option<SampledSignal>,
    pub events: Vec<Event>,
    pub status: RunStatus,
}

impl SimulationResult {
    /// `t0 + g h`.
    pub fn time(&self, g: usize) -> f64 {
        self.t0 + g as f64 * self.h
    }

    /// Number of completed micro-steps.
    pub fn steps(&self) -> usize {
        self.x.written_len().saturating_sub(self.plan.n_r + 1)
    }

    /// `x(t0 + g h)`.
    pub fn state(&self, g: usize) -> Option<&[f64]> {
        self.x.node(self.plan.n_r + g)
    }

    /// Controller output `u(t0 + g h)` (left value of its micro-step).
    pub fn output(&self, g: usize) -> Option<&[f64]> {
        self.u.node(self.plan.n_r + self.plan.n_tau + g)
    }

    /// Input driving the plant on step `g`, i.e. `u(t0 + g h - τ)`.
    pub fn applied_input(&self, g: usize) -> Option<Segment<'_>> {
        self.u.segment(self.plan.n_r + g)
    }

    pub fn observer(&self, g: usize) -> Option<&[f64]> {
        self.z.as_ref().and_then(|z| z.node(g))
    }

    /// `|x(t0 + g h)|` for every completed node from `t0` on.
    pub fn state_norms(&self) -> Vec<f64> {
        (0..=self.steps())
            .filter_map(|g| self.state(g))
            .map(norm)
            .collect()
    }

    /// Largest state norm on the initial segment `[t0 - r, t0]`.
    pub fn initial_sup_norm(&self) -> f64 {
        (0..=self.plan.n_r)
            .filter_map(|k| self.x.node(k))
            .map(norm)
            .fold(0.0, f64::max)
    }

    /// `‖x‖` over the closed window `[τ_i - r, τ_i]` at each sampling instant.
    pub fn history_sup_norms(&self) -> Vec<(f64, f64)> {
        let mut out = Vec::new();
        let mut i = 0;
        loop {
            let g = i * self.plan.n_t;
            if g > self.steps() {
                break;
            }
            let sup = (g..=g + self.plan.n_r)
                .filter_map(|k| self.x.node(k))
                .map(norm)
                .fold(0.0, f64::max);
            out.push((self.t0 + i as f64 * self.period, sup));
            i += 1;
        }
        out
    }
}

enum Runtime {
    Dynamic(DynamicController),
    Zoh(ZohController),
    Networked(LtiNetworked),
    Deci(DeciController),
    UnicycleZoh(UnicycleZoh),
    Uncompensated(Uncompensated),
}

fn predictor_for(s: &Scenario, kind: PredictorKind) -> Result<Predictor> {
    Predictor::new(
        PredictorSpec {
            kind,
            r: s.r,
            tau: s.tau,
        },
        &s.plant,
        s.integrator(),
    )
}

fn lti_matrices(plant: &PlantModel) -> Option<(DMatrix<f64>, DMatrix<f64>)> {
    match plant {
        PlantModel::Scalar => {
            let one = DMatrix::from_element(1, 1, 1.0);
            Some((one.clone(), one))
        }
        PlantModel::Lti(p) => Some((p.a.clone(), p.b.clone())),
        _ => None,
    }
}

fn check_feedback(s: &Scenario, k: &NominalFeedback, n: usize, m: usize) -> Result<()> {
    check_len(k.n, n)?;
    check_len(k.m, m)?;
    if k.zero_at_origin {
        k.check_zero_at_origin(s.t0, s.period)?;
    }
    Ok(())
}

/// Ring entries `u_{-p}`, read from the initial input at `max(-pT, -r-τ)`.
fn initial_ring(s: &Scenario, depth: usize) -> InputRingBuffer {
    let m = s.plant.m();
    InputRingBuffer::from_fn(depth, m, |p| {
        let theta = (-(p as f64) * s.period).max(-(s.r + s.tau));
        s.u0.input_at(theta)
    })
}

fn build_runtime(s: &Scenario, x_start: &[f64], u_window: &InputHistory) -> Result<Runtime> {
    let (n, m) = (s.plant.n(), s.plant.m());
    Ok(match &s.controller {
        ControllerSpec::Dynamic {
            feedback,
            predictor,
        } => {
            check_feedback(s, feedback, n, m)?;
            let pred = predictor_for(s, *predictor)?;
            let z0 = match &s.z0 {
                Some(z) => z.clone(),
                None => pred.predict(x_start, u_window)?,
            };
            Runtime::Dynamic(DynamicController::new(
                s.plant.clone(),
                feedback.clone(),
                pred,
                s.tau,
                s.overflow_bound,
                z0,
            )?)
        }
        ControllerSpec::UnicycleDynamic { feedback } => {
            if s.plant != PlantModel::Unicycle {
                return Err(Error::Config(
                    "unicycle_dynamic needs plant.type = unicycle".into(),
                ));
            }
            check_feedback(s, feedback, 3, 2)?;
            let pred = predictor_for(s, PredictorKind::Unicycle)?;
            let z0 = match &s.z0 {
                Some(z) => z.clone(),
                None => pred.predict(x_start, u_window)?,
            };
            Runtime::Dynamic(DynamicController::new(
                s.plant.clone(),
                unicycle_pose_feedback(feedback.clone()),
                pred,
                s.tau,
                s.overflow_bound,
                z0,
            )?)
        }
        ControllerSpec::Zoh {
            feedback,
            predictor,
        } => {
            check_feedback(s, feedback, n, m)?;
            Runtime::Zoh(ZohController::new(
                feedback.clone(),
                predictor_for(s, *predictor)?,
                s.period,
                s.h,
            )?)
        }
        ControllerSpec::LtiNetworked { k } => {
            let (a, b) = lti_matrices(&s.plant)
                .ok_or_else(|| Error::Config("lti_networked needs a linear plant".into()))?;
            check_len(k.nrows(), m)?;
            check_len(k.ncols(), n)?;
            let weights = NetworkedWeights::new(&a, &b, s.r, s.tau, s.period, s.h)?;
            let ring = initial_ring(s, weights.depth());
            Runtime::Networked(LtiNetworked::new(k.clone(), weights, ring)?)
        }
        ControllerSpec::Deci { k } => {
            let theta = match &s.plant {
                PlantModel::StrictFeedforward2d { p } => Theta::StrictFeedforward2d(p.clone()),
                PlantModel::Lti(p) => {
                    let (a0, b0) = chain_of_integrators(p.n());
                    if p.a != a0 || p.b != b0 {
                        return Err(Error::Config(
                            "deci with a linear plant needs a chain of integrators".into(),
                        ));
                    }
                    Theta::Identity
                }
                other => {
                    return Err(Error::Config(format!(
                        "deci does not support plant '{}'",
                        other.id()
                    )))
                }
            };
            let k = match k {
                Some(k) => k.clone(),
                None => deadbeat_chain_gain(n, s.period)?,
            };
            check_len(k.nrows(), 1)?;
            check_len(k.ncols(), n)?;
            let (a0, b0) = chain_of_integrators(n);
            let depth = NetworkedWeights::new(&a0, &b0, s.r, s.tau, s.period, s.h)?.depth();
            Runtime::Deci(DeciController::new(
                theta,
                k,
                s.r,
                s.tau,
                s.period,
                s.h,
                initial_ring(s, depth),
            )?)
        }
        ControllerSpec::UnicycleZoh { hold } => {
            if s.plant != PlantModel::Unicycle {
                return Err(Error::Config(
                    "unicycle_zoh needs plant.type = unicycle".into(),
                ));
            }
            Runtime::UnicycleZoh(UnicycleZoh::new(
                predictor_for(s, PredictorKind::Unicycle)?,
                s.period,
                s.h,
                *hold,
            )?)
        }
        ControllerSpec::Uncompensated { k } => {
            check_len(k.nrows(), m)?;
            check_len(k.ncols(), n)?;
            Runtime::Uncompensated(Uncompensated::new(k.clone()))
        }
    })
}

fn status_for(err: &Error, t: f64) -> Option<RunStatus> {
    match err {
        Error::ForwardCompletenessViolated { .. } => Some(RunStatus::Diverged { t }),
        Error::NonFiniteValue { .. } => Some(RunStatus::NonFinite { t }),
        _ => None,
    }
}

/// Runs the closed loop. Per micro-step: sample (measure, predict, update)
/// when `t` is a sampling instant, emit the controller output for the step,
/// then advance the plant with the output recorded `τ` earlier.
///
/// Overflow and non-finite values end the run early with the corresponding
/// status; only configuration problems are returned as errors.
pub fn run(s: &Scenario) -> Result<SimulationResult> {
    let plan = s.plan()?;
    let Plan {
        n_r,
        n_tau,
        n_t,
        n_h,
    } = plan;
    let (n, m) = (s.plant.n(), s.plant.m());
    let h = s.h;
    let cfg = s.integrator();

    let x_grid = TimeGrid::new(s.t0 - s.r, h, n_r + n_h + 1)?;
    let u_grid = TimeGrid::new(s.t0 - s.r - s.tau, h, n_r + n_tau + n_h)?;
    let mut x = SampledSignal::new(x_grid, n, Interpolation::Linear);
    let mut u = SampledSignal::new(u_grid, m, Interpolation::HoldLeft);
    for k in 0..=n_r {
        let theta = (k as f64 - n_r as f64) * h;
        x.record(k, &s.x0.state_at(theta))?;
    }
    for k in 0..n_r + n_tau {
        let theta = (k as f64 - (n_r + n_tau) as f64) * h;
        u.record(k, &s.u0.input_at(theta))?;
    }

    let first_window = window_history(&u, 0, n_r + n_tau, s.r + s.tau);
    let mut runtime = build_runtime(s, x.node(0).expect("recorded"), &first_window)?;
    let mut z = match runtime {
        Runtime::Dynamic(_) => Some(SampledSignal::new(
            TimeGrid::new(s.t0, h, n_h + 1)?,
            n,
            Interpolation::Linear,
        )),
        _ => None,
    };

    let mut events = Vec::new();
    let mut held = vec![0.0; m];
    let mut status = RunStatus::Completed;

    for g in 0..n_h {
        let t = s.t0 + g as f64 * h;
        let step = (|| -> Result<()> {
            if g % n_t == 0 {
                let i = g / n_t;
                let t_i = s.t0 + i as f64 * s.period;
                let y = x.node(g).expect("state history is recorded").to_vec();
                let window = window_history(&u, g, n_r + n_tau, s.r + s.tau);
                let (phi, out) = match &mut runtime {
                    Runtime::Dynamic(ctl) => {
                        if i > 0 {
                            ctl.sample(&y, &window)?;
                        }
                        (ctl.z().to_vec(), ctl.output(t_i))
                    }
                    Runtime::Zoh(ctl) => ctl.sample(t_i, &y, &window)?,
                    Runtime::Networked(ctl) => ctl.sample(&y)?,
                    Runtime::Deci(ctl) => ctl.sample(&y)?,
                    Runtime::UnicycleZoh(ctl) => ctl.sample(&y, &window)?,
                    Runtime::Uncompensated(ctl) => {
                        let out = ctl.sample(&y)?;
                        (y.clone(), out)
                    }
                };
                if out.iter().chain(phi.iter()).any(|v| !v.is_finite()) {
                    return Err(Error::NonFiniteValue {
                        context: "controller output",
                    });
                }
                held = out.clone();
                events.push(Event {
                    i,
                    t: t_i,
                    y,
                    phi,
                    u: out,
                });
            }
            match &mut runtime {
                Runtime::Dynamic(ctl) => {
                    if let Some(zs) = z.as_mut() {
                        zs.record(g, ctl.z())?;
                    }
                    let profile = ctl.flow(t, h)?;
                    u.record_segment(n_r + n_tau + g, profile.segment())?;
                }
                Runtime::UnicycleZoh(ctl) => {
                    let since = (g % n_t) as f64 * h;
                    u.record_segment(n_r + n_tau + g, ctl.profile(since, h).segment())?;
                }
                _ => u.record(n_r + n_tau + g, &held)?,
            }
            let seg = u.segment(n_r + g).expect("delayed input is recorded");
            let next =
                integrate_segment(&s.plant, x.node(n_r + g).expect("current state"), seg, &cfg)?;
            x.record(n_r + g + 1, &next)?;
            Ok(())
        })();
        if let Err(err) = step {
            match status_for(&err, t) {
                Some(st) => {
                    status = st;
                    break;
                }
                None => return Err(err),
            }
        }
    }
    if status == RunStatus::Completed {
        if let (Some(zs), Runtime::Dynamic(ctl)) = (z.as_mut(), &runtime) {
            zs.record(n_h, ctl.z())?;
        }
    }

    Ok(SimulationResult {
        t0: s.t0,
        h,
        period: s.period,
        r: s.r,
        tau: s.tau,
        plan,
        x,
        u,
        z,
        events,
        status,
    })
}

/// Segments `[first, first + len)` of the output signal as an open history.
fn window_history(u: &SampledSignal, first: usize, len: usize, span: f64) -> InputHistory {
    let mut hist = InputHistory::new(u.dim(), u.grid().h);
    for k in first..first + len {
        hist.push_segment(u.segment(k).expect("window inside recorded input"));
    }
    hist.with_duration(span)
}

/// The same scenario under the naive sampled law `u_i = K y_i`, with `K`
/// taken from the scenario's controller.
pub fn run_uncompensated_reference(s: &Scenario) -> Result<SimulationResult> {
    let k = match &s.controller {
        ControllerSpec::LtiNetworked { k } | ControllerSpec::Uncompensated { k } => k.clone(),
        ControllerSpec::Zoh { feedback, .. } | ControllerSpec::Dynamic { feedback, .. } => feedback
            .linear_gain
            .clone()
            .ok_or_else(|| Error::Config("reference run needs a linear gain".into()))?,
        ControllerSpec::Deci { k: Some(k) } => k.clone(),
        ControllerSpec::Deci { k: None } => deadbeat_chain_gain(s.plant.n(), s.period)?,
        _ => return Err(Error::Config("reference run needs a linear gain".into())),
    };
    let mut reference = s.clone();
    reference.controller = ControllerSpec::Uncompensated { k };
    run(&reference)
}
