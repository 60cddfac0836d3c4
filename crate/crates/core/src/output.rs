//! Result files: `trajectory.csv`, `events.csv` and `summary.json`.
//!
//! The trajectory has one row per node from `t0 - r - τ`; cells outside a
//! signal's coverage are left empty. Numbers use 17 significant digits, so
//! metrics recomputed from the files match the summary exactly.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::analysis::{classify_run, deadbeat_run, scale_or_one, DeadbeatReport, StabilityClass};
use crate::config::ScenarioConfig;
use crate::error::{Error, Result};
use crate::signals::{grid_steps, norm};
use crate::simulation::{RunStatus, SimulationResult};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

fn io_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Config(format!("{}: {e}", path.display()))
}

/// Run parameters needed to recompute metrics from the trajectory file.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunInfo {
    pub t0: f64,
    pub h: f64,
    pub period: f64,
    pub r: f64,
    pub tau: f64,
    pub n: usize,
    pub m: usize,
    pub status: RunStatus,
    pub window_fraction: f64,
    /// `(eps, bound offset from t0)` when a dead-beat check is requested.
    pub deadbeat: Option<(f64, f64)>,
}

/// State and output samples on the common grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub info: RunInfo,
    /// `x(t0 - r + k h)` for every recorded node.
    pub x: Vec<Vec<f64>>,
    /// Controller output `u(t0 - r - τ + k h)` for every recorded node.
    pub u: Vec<Vec<f64>>,
}

impl Trace {
    pub fn from_result(
        res: &SimulationResult,
        window_fraction: f64,
        deadbeat: Option<(f64, f64)>,
    ) -> Self {
        let info = RunInfo {
            t0: res.t0,
            h: res.h,
            period: res.period,
            r: res.r,
            tau: res.tau,
            n: res.x.dim(),
            m: res.u.dim(),
            status: res.status,
            window_fraction,
            deadbeat,
        };
        let x = (0..res.x.written_len())
            .map(|k| res.x.node(k).expect("written").to_vec())
            .collect();
        let u = (0..res.u.written_len())
            .map(|k| res.u.node(k).expect("written").to_vec())
            .collect();
        Self { info, x, u }
    }

    fn steps(&self) -> Result<(usize, usize)> {
        let n_r = grid_steps(self.info.r, self.info.h, "r")?;
        let n_tau = grid_steps(self.info.tau, self.info.h, "tau")?;
        Ok((n_r, n_tau))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Metrics {
    pub verdict: Option<StabilityClass>,
    pub rate: Option<f64>,
    pub fit_window: Option<(f64, f64)>,
    pub residual: Option<f64>,
    /// Why no verdict was produced, if so.
    pub verdict_note: Option<String>,
    pub t_zero: Option<f64>,
    pub deadbeat: Option<DeadbeatReport>,
    /// `(τ_i, sup over [τ_i - r, τ_i] of |x|)`.
    pub sup_norms: Vec<(f64, f64)>,
}

fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

pub fn metrics(trace: &Trace) -> Result<Metrics> {
    let info = &trace.info;
    let (n_r, n_tau) = trace.steps()?;
    let n_t = grid_steps(info.period, info.h, "T")?;
    let norms: Vec<f64> = trace.x.iter().skip(n_r).map(|x| norm(x)).collect();
    let all: Vec<f64> = trace.x.iter().map(|x| norm(x)).collect();

    let (verdict, rate, fit_window, residual, verdict_note) = match classify_run(
        &norms,
        info.status,
        info.t0,
        info.h,
        info.period,
        info.window_fraction,
    ) {
        Ok(v) => (
            Some(v.class),
            finite(v.rate),
            Some(v.fit_window),
            finite(v.residual),
            None,
        ),
        Err(e) => (None, None, None, None, Some(e.to_string())),
    };

    let deadbeat = info.deadbeat.map(|(eps, bound)| {
        let state = all.iter().take(n_r + 1).copied().fold(0.0, f64::max);
        let input = trace
            .u
            .iter()
            .take(n_r + n_tau)
            .map(|u| norm(u))
            .fold(0.0, f64::max);
        deadbeat_run(
            &norms,
            info.status,
            scale_or_one(state.max(input)),
            info.t0,
            info.h,
            eps,
            bound,
        )
    });

    let mut sup_norms = Vec::new();
    let mut i = 0;
    while i * n_t + n_r < all.len() {
        let g = i * n_t;
        let sup = all[g..=g + n_r].iter().copied().fold(0.0, f64::max);
        sup_norms.push((info.t0 + i as f64 * info.period, sup));
        i += 1;
    }

    Ok(Metrics {
        verdict,
        rate,
        fit_window,
        residual,
        verdict_note,
        t_zero: deadbeat.and_then(|d| d.t_zero),
        deadbeat,
        sup_norms,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct Summary<'a> {
    pub version: &'static str,
    pub status: RunStatus,
    #[serde(flatten)]
    pub metrics: &'a Metrics,
    pub run: RunInfo,
    pub config: Option<&'a ScenarioConfig>,
}

fn fmt(v: f64) -> String {
    format!("{v:.16e}")
}

fn write_trajectory(path: &Path, res: &SimulationResult, trace: &Trace) -> Result<()> {
    let (n_r, n_tau) = trace.steps()?;
    let (n, m) = (trace.info.n, trace.info.m);
    let z_dim = res.z.as_ref().map_or(0, |z| z.dim());
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)
        .map_err(|e| io_err(path, e))?;
    let mut header = vec!["t".to_string()];
    header.extend((1..=n).map(|i| format!("x{i}")));
    header.extend((1..=m).map(|i| format!("u{i}")));
    header.extend((1..=z_dim).map(|i| format!("z{i}")));
    w.write_record(&header).map_err(|e| io_err(path, e))?;

    let rows = (n_tau + trace.x.len()).max(trace.u.len());
    let t_start = trace.info.t0 - trace.info.r - trace.info.tau;
    for j in 0..rows {
        let mut row = Vec::with_capacity(1 + n + m + z_dim);
        row.push(fmt(t_start + j as f64 * trace.info.h));
        match j.checked_sub(n_tau).and_then(|k| trace.x.get(k)) {
            Some(x) => row.extend(x.iter().map(|v| fmt(*v))),
            None => row.extend(std::iter::repeat_n(String::new(), n)),
        }
        match trace.u.get(j) {
            Some(u) => row.extend(u.iter().map(|v| fmt(*v))),
            None => row.extend(std::iter::repeat_n(String::new(), m)),
        }
        if z_dim > 0 {
            match j.checked_sub(n_r + n_tau).and_then(|g| res.observer(g)) {
                Some(z) => row.extend(z.iter().map(|v| fmt(*v))),
                None => row.extend(std::iter::repeat_n(String::new(), z_dim)),
            }
        }
        w.write_record(&row).map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

fn write_events(path: &Path, res: &SimulationResult) -> Result<()> {
    let (n, m) = (res.x.dim(), res.u.dim());
    let phi_dim = res.events.first().map_or(n, |e| e.phi.len());
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)
        .map_err(|e| io_err(path, e))?;
    let mut header = vec!["i".to_string(), "tau_i".to_string()];
    header.extend((1..=n).map(|i| format!("y{i}")));
    header.extend((1..=phi_dim).map(|i| format!("phi{i}")));
    header.extend((1..=m).map(|i| format!("u{i}")));
    w.write_record(&header).map_err(|e| io_err(path, e))?;
    for e in &res.events {
        let mut row = vec![e.i.to_string(), fmt(e.t)];
        row.extend(e.y.iter().chain(&e.phi).chain(&e.u).map(|v| fmt(*v)));
        w.write_record(&row).map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

/// Writes the three result files into `dir` and returns the metrics.
pub fn emit(
    res: &SimulationResult,
    config: Option<&ScenarioConfig>,
    window_fraction: f64,
    deadbeat: Option<(f64, f64)>,
    dir: &Path,
) -> Result<Metrics> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let trace = Trace::from_result(res, window_fraction, deadbeat);
    let m = metrics(&trace)?;
    write_trajectory(&dir.join("trajectory.csv"), res, &trace)?;
    write_events(&dir.join("events.csv"), res)?;
    let summary = Summary {
        version: VERSION,
        status: res.status,
        metrics: &m,
        run: trace.info,
        config,
    };
    let path = dir.join("summary.json");
    let text = serde_json::to_string_pretty(&summary).map_err(|e| io_err(&path, e))?;
    fs::write(&path, text + "\n").map_err(|e| io_err(&path, e))?;
    Ok(m)
}

/// Rebuilds the trace from `trajectory.csv` and the run block of `summary.json`.
pub fn load_trace(dir: &Path) -> Result<Trace> {
    let path = dir.join("summary.json");
    let text = fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
    let summary: Value = serde_json::from_str(&text).map_err(|e| io_err(&path, e))?;
    let info: RunInfo =
        serde_json::from_value(summary["run"].clone()).map_err(|e| io_err(&path, e))?;

    let path = dir.join("trajectory.csv");
    let mut rdr = csv::Reader::from_path(&path).map_err(|e| io_err(&path, e))?;
    let (mut x, mut u) = (Vec::new(), Vec::new());
    let cell = |s: &str| -> Result<Option<f64>> {
        if s.is_empty() {
            Ok(None)
        } else {
            s.parse::<f64>().map(Some).map_err(|e| io_err(&path, e))
        }
    };
    for rec in rdr.records() {
        let rec = rec.map_err(|e| io_err(&path, e))?;
        let vals: Vec<Option<f64>> = rec.iter().map(cell).collect::<Result<_>>()?;
        let xs: Option<Vec<f64>> = vals[1..1 + info.n].iter().copied().collect();
        let us: Option<Vec<f64>> = vals[1 + info.n..1 + info.n + info.m]
            .iter()
            .copied()
            .collect();
        if let Some(xs) = xs {
            x.push(xs);
        }
        if let Some(us) = us {
            u.push(us);
        }
    }
    Ok(Trace { info, x, u })
}

/// Recomputes the metrics from the written files and compares them with the
/// stored summary; returns the recomputed metrics on success.
pub fn verify_round_trip(dir: &Path) -> Result<Metrics> {
    let trace = load_trace(dir)?;
    let m = metrics(&trace)?;
    let path = dir.join("summary.json");
    let text = fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
    let stored: Value = serde_json::from_str(&text).map_err(|e| io_err(&path, e))?;
    let fresh = serde_json::to_value(&m).map_err(|e| io_err(&path, e))?;
    for (key, value) in fresh.as_object().expect("metrics serialize to an object") {
        if stored.get(key) != Some(value) {
            return Err(Error::Config(format!(
                "{}: metric '{key}' differs after reload",
                path.display()
            )));
        }
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::controllers::NominalFeedback;
    use crate::plants::PlantModel;
    use crate::predictors::PredictorKind;
    use crate::simulation::{run, ControllerSpec, InitialSegment, Scenario};
    use nalgebra::DMatrix;

    #[test]
    fn files_reload_to_the_same_metrics() {
        let mut s = Scenario::new(
            PlantModel::Scalar,
            ControllerSpec::Zoh {
                feedback: NominalFeedback::linear(DMatrix::from_element(1, 1, -2.0)),
                predictor: PredictorKind::Lti,
            },
            0.3,
            1.0,
            1.0,
            25.0,
        );
        s.h = 1e-2;
        s.x0 = InitialSegment::Constant(vec![1.0]);
        s.u0 = InitialSegment::Constant(vec![4.0]);
        let res = run(&s).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let m = emit(&res, None, 0.5, Some((1e-6, 10.0)), dir.path()).unwrap();
        assert_eq!(m.verdict, Some(StabilityClass::Converging));
        let again = verify_round_trip(dir.path()).unwrap();
        assert_eq!(again, m);

        let traj = fs::read_to_string(dir.path().join("trajectory.csv")).unwrap();
        assert!(!traj.contains('\r'));
        let mut lines = traj.lines();
        assert_eq!(lines.next(), Some("t,x1,u1"));
        assert_eq!(traj.lines().count(), 1 + 130 + 2500 + 1);
        let events = fs::read_to_string(dir.path().join("events.csv")).unwrap();
        assert!(events.starts_with("i,tau_i,y1,phi1,u1\n"));
    }

    #[test]
    fn observer_columns() {
        let mut s = Scenario::new(
            PlantModel::Feedforward3d,
            ControllerSpec::Dynamic {
                feedback: NominalFeedback::feedforward3d(),
                predictor: PredictorKind::Feedforward3d,
            },
            0.2,
            0.2,
            1.0,
            2.0,
        );
        s.h = 1e-2;
        let res = run(&s).unwrap();
        let dir = tempfile::tempdir().unwrap();
        emit(&res, None, 0.5, None, dir.path()).unwrap();
        let traj = fs::read_to_string(dir.path().join("trajectory.csv")).unwrap();
        assert!(traj.starts_with("t,x1,x2,x3,u1,z1,z2,z3\n"));
        let m = verify_round_trip(dir.path()).unwrap();
        assert!(m.verdict.is_none());
        assert!(m.verdict_note.unwrap().contains("too short"));
    }
}
