use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};
use delaycomp::analysis::{
    deadbeat_bound, default_deadbeat_order, find_critical_delay, sweep, sweep_values, SweepParam,
};
use delaycomp::config::{load_scenario, parse_scenario, LoadedScenario};
use delaycomp::output::{emit, Metrics};
use delaycomp::simulation::{run, RunStatus};
use delaycomp::validation::validate_predictors;
use delaycomp::Error;

const EXIT_VALIDATION: u8 = 2;
const EXIT_NON_FINITE: u8 = 3;

const FIGURES: [(&str, &str); 3] = [
    ("configs/fig1.toml", include_str!("../configs/fig1.toml")),
    ("configs/fig2.toml", include_str!("../configs/fig2.toml")),
    ("configs/fig3.toml", include_str!("../configs/fig3.toml")),
];

/// Predictor-based delay compensation for sampled-data control.
#[derive(Parser)]
#[command(name = "delaycomp", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and write trajectory.csv, events.csv and summary.json.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// Output directory (defaults to outputs.dir, then ./out).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Classify runs over a range of one parameter; prints CSV.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// delays.r, delays.tau, sampling.T or horizon.
        #[arg(long)]
        param: String,
        #[arg(long)]
        from: f64,
        #[arg(long)]
        to: f64,
        #[arg(long)]
        steps: usize,
    },
    /// Bisect the measurement delay between a converging and a diverging run.
    CriticalDelay {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        lo: f64,
        #[arg(long)]
        hi: f64,
        #[arg(long)]
        tol: f64,
    },
    /// Compare the closed-form predictors with numerical integration.
    ValidatePredictors {
        #[arg(long, default_value_t = 100)]
        samples: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Reproduce figure 1, 2 or 3 from the shipped configurations.
    Figure {
        #[arg(value_parser = clap::value_parser!(u8).range(1..=3))]
        number: u8,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a scenario and report when the state reaches zero.
    Deadbeat {
        #[arg(long)]
        config: PathBuf,
        /// Order j of the nominal law (defaults per controller).
        #[arg(long)]
        order: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn out_dir(loaded: &LoadedScenario, out: Option<PathBuf>) -> PathBuf {
    out.or_else(|| loaded.config.outputs.dir.clone().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"))
}

fn print_metrics(status: RunStatus, m: &Metrics, dir: &Path) {
    let opt = |v: Option<f64>| v.map_or("null".to_string(), |v| format!("{v:.6e}"));
    let verdict = match (&m.verdict, &m.verdict_note) {
        (Some(v), _) => serde_json::to_value(v)
            .unwrap()
            .as_str()
            .unwrap_or("")
            .to_string(),
        (None, Some(note)) => format!("none ({note})"),
        (None, None) => "none".into(),
    };
    println!("status: {}", status.label());
    if let RunStatus::Diverged { t } | RunStatus::NonFinite { t } = status {
        println!("stopped at t = {t}");
    }
    println!("verdict: {verdict}");
    println!("rate: {}", opt(m.rate));
    println!("t_zero: {}", opt(m.t_zero));
    println!("output: {}", dir.display());
}

fn simulate(
    loaded: LoadedScenario,
    out: Option<PathBuf>,
    deadbeat: Option<(f64, f64)>,
) -> anyhow::Result<u8> {
    let dir = out_dir(&loaded, out);
    let res = run(&loaded.scenario)?;
    let m = emit(
        &res,
        Some(&loaded.config),
        loaded.config.analysis.window_fraction,
        deadbeat,
        &dir,
    )?;
    print_metrics(res.status, &m, &dir);
    if let Some(report) = &m.deadbeat {
        println!("deadbeat: {}", serde_json::to_string(report)?);
    }
    Ok(match res.status {
        RunStatus::NonFinite { .. } => EXIT_NON_FINITE,
        _ => 0,
    })
}

fn dispatch(cli: Cli) -> anyhow::Result<u8> {
    match cli.command {
        Command::Simulate { config, out } => simulate(load_scenario(&config)?, out, None),
        Command::Figure { number, out } => {
            let (origin, text) = FIGURES[usize::from(number) - 1];
            simulate(parse_scenario(text, origin)?, out, None)
        }
        Command::Deadbeat { config, order, out } => {
            let loaded = load_scenario(&config)?;
            let s = &loaded.scenario;
            let order = order
                .or(loaded.config.analysis.deadbeat_order)
                .or_else(|| default_deadbeat_order(s))
                .context("no default dead-beat order for this controller; pass --order")?;
            let bound = deadbeat_bound(s, order)?;
            let eps = loaded.config.analysis.deadbeat_eps;
            simulate(loaded, out, Some((eps, bound)))
        }
        Command::Sweep {
            config,
            param,
            from,
            to,
            steps,
        } => {
            let loaded = load_scenario(&config)?;
            let param = SweepParam::parse(&param)?;
            let values = sweep_values(from, to, steps, loaded.scenario.h);
            let points = sweep(
                &loaded.scenario,
                param,
                &values,
                loaded.config.analysis.window_fraction,
            );
            println!("value,status,verdict,rate,error");
            for p in points {
                let status = p.status.map_or("", |s| s.label());
                let verdict = p
                    .verdict
                    .map(|v| {
                        serde_json::to_value(v.class)
                            .unwrap()
                            .as_str()
                            .unwrap_or("")
                            .to_string()
                    })
                    .unwrap_or_default();
                let rate = p
                    .verdict
                    .map(|v| format!("{:.6e}", v.rate))
                    .unwrap_or_default();
                let error = p.error.unwrap_or_default().replace(',', ";");
                println!("{},{status},{verdict},{rate},{error}", p.value);
            }
            Ok(0)
        }
        Command::CriticalDelay {
            config,
            lo,
            hi,
            tol,
        } => {
            let loaded = load_scenario(&config)?;
            let found = find_critical_delay(
                &loaded.scenario,
                lo,
                hi,
                tol,
                loaded.config.analysis.window_fraction,
            )?;
            println!("{}", serde_json::to_string_pretty(&found)?);
            Ok(0)
        }
        Command::ValidatePredictors { samples, seed } => {
            if samples == 0 {
                bail!(Error::Config("--samples must be positive".into()));
            }
            let reports = validate_predictors(samples, seed)?;
            let mut ok = true;
            println!(
                "{:<14} {:>7} {:>12} {:>10}  result",
                "predictor", "samples", "max_error", "tolerance"
            );
            for r in &reports {
                ok &= r.passed;
                println!(
                    "{:<14} {:>7} {:>12.3e} {:>10.0e}  {}",
                    r.kind.name(),
                    r.samples,
                    r.max_error,
                    r.tolerance,
                    if r.passed { "PASS" } else { "FAIL" }
                );
            }
            Ok(if ok { 0 } else { 1 })
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {err:#}");
            let code = match err.downcast_ref::<Error>() {
                Some(Error::NonFiniteValue { .. }) => EXIT_NON_FINITE,
                Some(
                    Error::Config(_)
                    | Error::SamplingPeriodMismatch { .. }
                    | Error::DimensionMismatch { .. }
                    | Error::NominalFeedbackSuspect { .. }
                    | Error::NonCommuting { .. }
                    | Error::BracketInvalid(_)
                    | Error::TooShort { .. },
                ) => EXIT_VALIDATION,
                _ => 1,
            };
            ExitCode::from(code)
        }
    }
}
