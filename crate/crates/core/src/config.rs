//! TOML scenario files.
//!
//! ```toml
//! horizon = 30.0
//!
//! [plant]
//! type = "scalar"
//!
//! [controller]
//! type = "uncompensated"
//! gain.k = [-2.0]
//!
//! [delays]
//! r = 0.1
//!
//! [sampling]
//! T = 1.0
//!
//! [init.state]
//! value = [1.0]
//! ```
//!
//! Validation errors name the offending key and the line it sits on.

use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::analysis::{DEFAULT_DEADBEAT_EPS, DEFAULT_WINDOW_FRACTION};
use crate::controllers::{input_delay_periods, NominalFeedback, UnicycleHold};
use crate::error::{Error, Result};
use crate::plants::{IntegratorConfig, PlantModel, Polynomial};
use crate::predictors::PredictorKind;
use crate::signals::grid_steps;
use crate::simulation::{ControllerSpec, InitialSegment, Scenario};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub horizon: f64,
    pub plant: PlantSection,
    pub controller: ControllerSection,
    #[serde(default)]
    pub delays: DelaysSection,
    pub sampling: SamplingSection,
    #[serde(default)]
    pub integrator: IntegratorSection,
    #[serde(default)]
    pub init: InitSection,
    #[serde(default)]
    pub outputs: OutputsSection,
    #[serde(default)]
    pub analysis: AnalysisSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantSection {
    #[serde(rename = "type")]
    pub kind: String,
    #[serde(default)]
    pub params: PlantParams,
}

/// Matrices are row-major flat lists; `n` and `m` give their shapes.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantParams {
    pub n: Option<usize>,
    pub m: Option<usize>,
    pub a: Option<Vec<f64>>,
    pub b: Option<Vec<f64>>,
    pub c: Option<Vec<f64>>,
    /// Polynomial coefficients, lowest degree first.
    pub p: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerSection {
    #[serde(rename = "type")]
    pub kind: String,
    pub feedback: Option<String>,
    pub predictor: Option<String>,
    pub hold: Option<String>,
    #[serde(default)]
    pub gain: GainSection,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GainSection {
    /// `m × n` gain, row-major.
    pub k: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DelaysSection {
    #[serde(default)]
    pub r: f64,
    #[serde(default)]
    pub tau: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingSection {
    #[serde(rename = "T")]
    pub period: f64,
    #[serde(default)]
    pub t0: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegratorSection {
    #[serde(default = "default_h")]
    pub h: f64,
    #[serde(default = "default_overflow")]
    pub overflow_bound: f64,
}

fn default_h() -> f64 {
    IntegratorConfig::DEFAULT_H
}

fn default_overflow() -> f64 {
    IntegratorConfig::DEFAULT_OVERFLOW
}

impl Default for IntegratorSection {
    fn default() -> Self {
        Self {
            h: default_h(),
            overflow_bound: default_overflow(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitSection {
    pub state: Option<SegmentSection>,
    pub input: Option<SegmentSection>,
    pub observer: Option<Vec<f64>>,
}

/// `mode = "constant"` with `value`, or `mode = "table"` with `points`, each
/// point being `[θ, v1, v2, ...]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegmentSection {
    #[serde(default = "default_mode")]
    pub mode: String,
    pub value: Option<Vec<f64>>,
    pub points: Option<Vec<Vec<f64>>>,
}

fn default_mode() -> String {
    "constant".into()
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputsSection {
    pub dir: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisSection {
    #[serde(default = "default_fraction")]
    pub window_fraction: f64,
    pub deadbeat_order: Option<usize>,
    #[serde(default = "default_eps")]
    pub deadbeat_eps: f64,
}

fn default_fraction() -> f64 {
    DEFAULT_WINDOW_FRACTION
}

fn default_eps() -> f64 {
    DEFAULT_DEADBEAT_EPS
}

impl Default for AnalysisSection {
    fn default() -> Self {
        Self {
            window_fraction: default_fraction(),
            deadbeat_order: None,
            deadbeat_eps: default_eps(),
        }
    }
}

/// A parsed and validated scenario file.
#[derive(Debug, Clone)]
pub struct LoadedScenario {
    pub config: ScenarioConfig,
    pub scenario: Scenario,
}

/// 1-based line of `key` (dotted path) in TOML `source`, falling back to the
/// closest enclosing table.
pub fn key_line(source: &str, key: &str) -> Option<usize> {
    let mut table = String::new();
    let mut table_lines: Vec<(String, usize)> = Vec::new();
    for (idx, raw) in source.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if let Some(header) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            table = header
                .trim_matches(|c| c == '[' || c == ']')
                .trim()
                .to_string();
            table_lines.push((table.clone(), idx + 1));
            if table == key {
                return Some(idx + 1);
            }
            continue;
        }
        if let Some((lhs, _)) = line.split_once('=') {
            let local: Vec<&str> = lhs.split('.').map(|p| p.trim().trim_matches('"')).collect();
            let full = if table.is_empty() {
                local.join(".")
            } else {
                format!("{table}.{}", local.join("."))
            };
            if full == key || key.starts_with(&format!("{full}.")) {
                return Some(idx + 1);
            }
        }
    }
    let mut parent = key;
    while let Some((head, _)) = parent.rsplit_once('.') {
        if let Some((_, line)) = table_lines.iter().find(|(t, _)| t == head) {
            return Some(*line);
        }
        parent = head;
    }
    None
}

struct Locator<'a> {
    source: &'a str,
    origin: &'a str,
}

impl Locator<'_> {
    fn err(&self, key: &str, message: impl std::fmt::Display) -> Error {
        match key_line(self.source, key) {
            Some(line) => Error::Config(format!("{}:{line}: {key}: {message}", self.origin)),
            None => Error::Config(format!("{}: {key}: {message}", self.origin)),
        }
    }
}

fn matrix(
    loc: &Locator,
    key: &str,
    data: &Option<Vec<f64>>,
    rows: usize,
    cols: usize,
) -> Result<DMatrix<f64>> {
    let data = data
        .as_ref()
        .ok_or_else(|| loc.err(key, format!("missing {rows}x{cols} matrix")))?;
    if data.len() != rows * cols {
        return Err(loc.err(
            key,
            format!(
                "expected {} entries for a {rows}x{cols} matrix, got {}",
                rows * cols,
                data.len()
            ),
        ));
    }
    if data.iter().any(|v| !v.is_finite()) {
        return Err(loc.err(key, "entries must be finite"));
    }
    Ok(DMatrix::from_row_slice(rows, cols, data))
}

fn build_plant(loc: &Locator, p: &PlantSection) -> Result<PlantModel> {
    let params = &p.params;
    Ok(match p.kind.as_str() {
        "scalar" => PlantModel::Scalar,
        "nonholonomic" => PlantModel::Nonholonomic,
        "feedforward3d" => PlantModel::Feedforward3d,
        "unicycle" => PlantModel::Unicycle,
        "strict_feedforward2d" => PlantModel::StrictFeedforward2d {
            p: params.p.clone().map(Polynomial::new).unwrap_or_default(),
        },
        "lti" => {
            let n = params.n.ok_or_else(|| loc.err("plant.params.n", "required for an lti plant"))?;
            let m = params.m.unwrap_or(1);
            if n == 0 || m == 0 {
                return Err(loc.err("plant.params.n", "dimensions must be positive"));
            }
            let a = matrix(loc, "plant.params.a", &params.a, n, n)?;
            let b = matrix(loc, "plant.params.b", &params.b, n, m)?;
            PlantModel::lti(a, b)?
        }
        "bilinear" => {
            let n = params
                .n
                .ok_or_else(|| loc.err("plant.params.n", "required for a bilinear plant"))?;
            if n == 0 {
                return Err(loc.err("plant.params.n", "dimension must be positive"));
            }
            let a = matrix(loc, "plant.params.a", &params.a, n, n)?;
            let b = matrix(loc, "plant.params.b", &params.b, n, 1)?;
            let c = matrix(loc, "plant.params.c", &params.c, n, n)?;
            PlantModel::bilinear(a, b, c)?
        }
        other => {
            return Err(loc.err(
                "plant.type",
                format!(
                    "unknown plant '{other}' (expected scalar, lti, bilinear, nonholonomic, feedforward3d, strict_feedforward2d or unicycle)"
                ),
            ))
        }
    })
}

fn gain(loc: &Locator, c: &ControllerSection, plant: &PlantModel) -> Result<Option<DMatrix<f64>>> {
    match &c.gain.k {
        None => Ok(None),
        Some(_) => matrix(loc, "controller.gain.k", &c.gain.k, plant.m(), plant.n()).map(Some),
    }
}

/// Named nonlinear feedbacks pass a delay-free check before use.
fn gated(loc: &Locator, k: NominalFeedback, plant: &PlantModel) -> Result<NominalFeedback> {
    let states = NominalFeedback::sanity_initial_states(plant.n());
    k.sanity_run(plant, &states, 40.0, 1e-2)
        .map_err(|e| loc.err("controller.feedback", e))?;
    Ok(k)
}

fn feedback(loc: &Locator, c: &ControllerSection, plant: &PlantModel) -> Result<NominalFeedback> {
    let k = gain(loc, c, plant)?;
    let name = match (&c.feedback, &k, plant) {
        (Some(name), _, _) => name.as_str(),
        (None, Some(_), _) => "linear",
        (None, None, PlantModel::Feedforward3d) => "feedforward3d",
        (None, None, PlantModel::Nonholonomic) => "nonholonomic_periodic",
        (None, None, _) => {
            return Err(loc.err(
                "controller.feedback",
                "required unless controller.gain.k is given",
            ))
        }
    };
    match name {
        "linear" => k
            .map(NominalFeedback::linear)
            .ok_or_else(|| loc.err("controller.gain.k", "required by feedback = \"linear\"")),
        "zero" => Ok(NominalFeedback::zeros(plant.n(), plant.m())),
        "feedforward3d" => {
            if *plant != PlantModel::Feedforward3d {
                return Err(loc.err("controller.feedback", "feedforward3d needs plant.type = feedforward3d"));
            }
            gated(loc, NominalFeedback::feedforward3d(), plant)
        }
        "nonholonomic_periodic" => {
            if *plant != PlantModel::Nonholonomic {
                return Err(loc.err(
                    "controller.feedback",
                    "nonholonomic_periodic needs plant.type = nonholonomic",
                ));
            }
            gated(loc, NominalFeedback::nonholonomic_periodic(), plant)
        }
        other => Err(loc.err(
            "controller.feedback",
            format!("unknown feedback '{other}' (expected linear, zero, feedforward3d or nonholonomic_periodic)"),
        )),
    }
}

fn predictor(loc: &Locator, c: &ControllerSection, plant: &PlantModel) -> Result<PredictorKind> {
    match &c.predictor {
        None => Ok(PredictorKind::preferred_for(plant)),
        Some(name) => PredictorKind::parse(name).ok_or_else(|| {
            loc.err(
                "controller.predictor",
                format!("unknown predictor '{name}' (expected numeric, lti, bilinear, cascade, feedforward3d or unicycle)"),
            )
        }),
    }
}

fn build_controller(
    loc: &Locator,
    c: &ControllerSection,
    plant: &PlantModel,
) -> Result<ControllerSpec> {
    let required_gain = |what: &str| -> Result<DMatrix<f64>> {
        gain(loc, c, plant)?.ok_or_else(|| {
            loc.err(
                "controller.gain.k",
                format!("required by controller.type = \"{what}\""),
            )
        })
    };
    Ok(match c.kind.as_str() {
        "dynamic" => ControllerSpec::Dynamic {
            feedback: feedback(loc, c, plant)?,
            predictor: predictor(loc, c, plant)?,
        },
        "zoh" => ControllerSpec::Zoh {
            feedback: feedback(loc, c, plant)?,
            predictor: predictor(loc, c, plant)?,
        },
        "lti_networked" => ControllerSpec::LtiNetworked {
            k: required_gain("lti_networked")?,
        },
        "uncompensated" => ControllerSpec::Uncompensated {
            k: required_gain("uncompensated")?,
        },
        "deci" => ControllerSpec::Deci {
            k: gain(loc, c, plant)?,
        },
        "unicycle_zoh" => {
            let hold = match &c.hold {
                None => UnicycleHold::default(),
                Some(name) => UnicycleHold::parse(name)
                    .ok_or_else(|| loc.err("controller.hold", format!("unknown hold '{name}' (expected chained or vehicle)")))?,
            };
            ControllerSpec::UnicycleZoh { hold }
        }
        "unicycle_dynamic" => {
            let chained = PlantModel::Nonholonomic;
            let k = match c.feedback.as_deref().unwrap_or("nonholonomic_periodic") {
                "nonholonomic_periodic" => gated(loc, NominalFeedback::nonholonomic_periodic(), &chained)?,
                other => {
                    return Err(loc.err(
                        "controller.feedback",
                        format!("unicycle_dynamic supports nonholonomic_periodic, got '{other}'"),
                    ))
                }
            };
            ControllerSpec::UnicycleDynamic { feedback: k }
        }
        other => {
            return Err(loc.err(
                "controller.type",
                format!(
                    "unknown controller '{other}' (expected dynamic, zoh, lti_networked, deci, unicycle_zoh, unicycle_dynamic or uncompensated)"
                ),
            ))
        }
    })
}

fn segment(
    loc: &Locator,
    key: &str,
    s: &Option<SegmentSection>,
    dim: usize,
) -> Result<InitialSegment> {
    let Some(s) = s else {
        return Ok(InitialSegment::Constant(vec![0.0; dim]));
    };
    match s.mode.as_str() {
        "constant" => {
            let value = s.value.clone().ok_or_else(|| {
                loc.err(&format!("{key}.value"), "required when mode = \"constant\"")
            })?;
            if value.len() != dim {
                return Err(loc.err(
                    &format!("{key}.value"),
                    format!("expected {dim} entries, got {}", value.len()),
                ));
            }
            if value.iter().any(|v| !v.is_finite()) {
                return Err(loc.err(&format!("{key}.value"), "entries must be finite"));
            }
            Ok(InitialSegment::Constant(value))
        }
        "table" => {
            let points = s.points.as_ref().ok_or_else(|| {
                loc.err(&format!("{key}.points"), "required when mode = \"table\"")
            })?;
            let mut table = Vec::with_capacity(points.len());
            for p in points {
                if p.len() != dim + 1 {
                    return Err(loc.err(
                        &format!("{key}.points"),
                        format!(
                            "each point is [theta, {dim} values], got {} numbers",
                            p.len()
                        ),
                    ));
                }
                if p[0] > 0.0 {
                    return Err(loc.err(&format!("{key}.points"), "theta must be <= 0"));
                }
                table.push((p[0], p[1..].to_vec()));
            }
            Ok(InitialSegment::Table(table))
        }
        other => Err(loc.err(
            &format!("{key}.mode"),
            format!("unknown mode '{other}' (expected constant or table)"),
        )),
    }
}

impl ScenarioConfig {
    /// Parses TOML text; `origin` labels error messages.
    pub fn parse(source: &str, origin: &str) -> Result<Self> {
        toml::from_str(source).map_err(|e| {
            let line = e
                .span()
                .map(|s| source[..s.start.min(source.len())].matches('\n').count() + 1);
            match line {
                Some(line) => Error::Config(format!("{origin}:{line}: {}", e.message())),
                None => Error::Config(format!("{origin}: {}", e.message())),
            }
        })
    }

    /// Builds and validates the scenario.
    pub fn to_scenario(&self, source: &str, origin: &str) -> Result<Scenario> {
        let loc = Locator { source, origin };
        let plant = build_plant(&loc, &self.plant)?;
        let controller = build_controller(&loc, &self.controller, &plant)?;

        let h = self.integrator.h;
        if !(h > 0.0) || !h.is_finite() {
            return Err(loc.err("integrator.h", format!("must be positive, got {h}")));
        }
        if !(self.integrator.overflow_bound > 0.0) {
            return Err(loc.err("integrator.overflow_bound", "must be positive"));
        }
        for (key, value) in [
            ("delays.r", self.delays.r),
            ("delays.tau", self.delays.tau),
            ("sampling.T", self.sampling.period),
            ("horizon", self.horizon),
        ] {
            grid_steps(value, h, key).map_err(|e| match e {
                Error::Config(msg) => loc.err(key, msg),
                other => other,
            })?;
        }
        if !(self.sampling.period > 0.0) {
            return Err(loc.err("sampling.T", "must be positive"));
        }
        if !self.sampling.t0.is_finite() {
            return Err(loc.err("sampling.t0", "must be finite"));
        }
        if controller.needs_aligned_tau() {
            input_delay_periods(self.delays.tau, self.sampling.period, h)
                .map_err(|e| loc.err("delays.tau", e))?;
        }
        let wf = self.analysis.window_fraction;
        if !(wf > 0.0 && wf <= 1.0) {
            return Err(loc.err("analysis.window_fraction", "must lie in (0, 1]"));
        }
        if !(self.analysis.deadbeat_eps > 0.0) {
            return Err(loc.err("analysis.deadbeat_eps", "must be positive"));
        }

        let x0 = segment(&loc, "init.state", &self.init.state, plant.n())?;
        let u0 = segment(&loc, "init.input", &self.init.input, plant.m())?;
        if let Some(z0) = &self.init.observer {
            if z0.len() != plant.n() {
                return Err(loc.err(
                    "init.observer",
                    format!("expected {} entries, got {}", plant.n(), z0.len()),
                ));
            }
        }
        let scenario = Scenario {
            plant,
            controller,
            r: self.delays.r,
            tau: self.delays.tau,
            period: self.sampling.period,
            t0: self.sampling.t0,
            h,
            horizon: self.horizon,
            x0,
            u0,
            z0: self.init.observer.clone(),
            overflow_bound: self.integrator.overflow_bound,
        };
        scenario.plan().map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{origin}: {msg}")),
            other => other,
        })?;
        Ok(scenario)
    }
}

/// Parses and validates scenario text.
pub fn parse_scenario(source: &str, origin: &str) -> Result<LoadedScenario> {
    let config = ScenarioConfig::parse(source, origin)?;
    let scenario = config.to_scenario(source, origin)?;
    Ok(LoadedScenario { config, scenario })
}

/// Reads, parses and validates a scenario file.
pub fn load_scenario(path: &Path) -> Result<LoadedScenario> {
    let origin = path.display().to_string();
    let source =
        std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{origin}: {e}")))?;
    parse_scenario(&source, &origin)
}

#[cfg(test)]
mod tests {
    use super::*;

    const FIG1: &str = r#"
horizon = 30.0

[plant]
type = "scalar"

[controller]
type = "uncompensated"
gain.k = [-2.0]

[delays]
r = 0.1

[sampling]
T = 1.0

[init.state]
mode = "constant"
value = [1.0]
"#;

    #[test]
    fn minimal_file_loads() {
        let loaded = parse_scenario(FIG1, "fig1.toml").unwrap();
        let s = loaded.scenario;
        assert_eq!(s.r, 0.1);
        assert_eq!(s.h, 1e-3);
        assert_eq!(s.x0, InitialSegment::Constant(vec![1.0]));
        assert_eq!(s.u0, InitialSegment::Constant(vec![0.0]));
        assert_eq!(s.controller.name(), "uncompensated");
    }

    #[test]
    fn misaligned_tau_names_the_field() {
        let src = r#"horizon = 10.0
[plant]
type = "scalar"
[controller]
type = "zoh"
gain.k = [-2.0]
[delays]
tau = 0.5
[sampling]
T = 1.0
"#;
        let err = parse_scenario(src, "bad.toml").unwrap_err().to_string();
        assert!(
            err.contains("tau must be an integer multiple of T"),
            "{err}"
        );
        assert!(err.contains("bad.toml:8: delays.tau"), "{err}");
    }

    #[test]
    fn syntax_errors_carry_a_line() {
        let err = parse_scenario("horizon = 1\n[plant\n", "x.toml")
            .unwrap_err()
            .to_string();
        assert!(err.contains("x.toml:2"), "{err}");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let src = FIG1.replace("r = 0.1", "r = 0.1\nrr = 2.0");
        assert!(parse_scenario(&src, "x.toml").is_err());
    }

    #[test]
    fn wrong_gain_shape() {
        let src = FIG1.replace("gain.k = [-2.0]", "gain.k = [-2.0, 1.0]");
        let err = parse_scenario(&src, "x.toml").unwrap_err().to_string();
        assert!(err.contains("x.toml:9: controller.gain.k"), "{err}");
    }

    #[test]
    fn off_grid_delay() {
        let src = FIG1.replace("r = 0.1", "r = 0.10005");
        let err = parse_scenario(&src, "x.toml").unwrap_err().to_string();
        assert!(err.contains(":12: delays.r"), "{err}");
    }

    #[test]
    fn lines_of_nested_keys() {
        let src = "a = 1\n[init.state]\nmode = \"table\"\npoints = [[0.0, 1.0]]\n";
        assert_eq!(key_line(src, "init.state.points"), Some(4));
        assert_eq!(key_line(src, "init.state.value"), Some(2));
        assert_eq!(key_line(src, "a"), Some(1));
    }

    #[test]
    fn tabulated_segments() {
        let src = FIG1.replace(
            "mode = \"constant\"\nvalue = [1.0]",
            "mode = \"table\"\npoints = [[-1.0, 0.0], [0.0, 2.0]]",
        );
        let s = parse_scenario(&src, "x.toml").unwrap().scenario;
        assert_eq!(s.x0.state_at(-0.5), vec![1.0]);
    }
}
