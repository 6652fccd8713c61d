use std::path::Path;
use std::time::Instant;

use serde::Serialize;

use bdpre::analysis::{compare_decomposition, velocity, DecompositionOptions, VelocityParams};
use bdpre::env::{check_conditions, EnvironmentLaw, EnvironmentWindow};
use bdpre::matrices::{classify_recurrence, lyapunov_top, Verdict};
use bdpre::par::{map_replicas, with_threads};
use bdpre::rng::tags;
use bdpre::simulate::{first_passage_time, simulate_path, StopRule};
use bdpre::stats::{mean_and_se, quantile};
use bdpre::{Error, StreamKey};

use crate::config::{OutputFormat, RunConfig};
use crate::report::{emit, render, PathDump, Report};
use crate::CliError;

const QUANTILES: [f64; 5] = [0.1, 0.25, 0.5, 0.75, 0.9];

pub fn run(command: &str, config_path: &Path, threads: usize, dump: Option<&Path>) -> Result<u8, CliError> {
    let text = std::fs::read_to_string(config_path)
        .map_err(|e| CliError::Validation(format!("cannot read config {}: {e}", config_path.display())))?;
    let config = RunConfig::parse(&text)?;
    let law = config.law()?;
    with_threads(threads, || dispatch(command, &config, &law, threads, dump))
}

fn dispatch(command: &str, config: &RunConfig, law: &EnvironmentLaw, threads: usize, dump: Option<&Path>) -> Result<u8, CliError> {
    let started = Instant::now();
    let finish = |result: serde_json::Value, code: u8| -> Result<u8, CliError> {
        let report = Report {
            command,
            version: bdpre::VERSION,
            seed: config.seed,
            threads,
            parallel: bdpre::par::is_parallel(),
            duration_seconds: started.elapsed().as_secs_f64(),
            config,
            result,
        };
        emit(&render(&report, config.output_format)?, config.output_path.as_deref())?;
        Ok(code)
    };
    match command {
        "check" => {
            let report = check_conditions(law);
            let code = if report.all_hold() { 0 } else { 3 };
            finish(value(&report)?, code)
        }
        "classify" => finish(value(&classify(config, law)?)?, 0),
        "passage" => finish(value(&passage(config, law, dump)?)?, 0),
        "velocity" => {
            require_conditions(law)?;
            let params = velocity_params(config);
            let report = velocity(law, config.n_env, config.horizon, config.n_paths, key(config), &params)?;
            finish(value(&report)?, 0)
        }
        "verify-decomposition" => {
            let verdict = classify(config, law)?;
            if matches!(verdict.verdict, Verdict::TransientLeft) {
                return Err(CliError::Domain(Error::InvalidParameter {
                    name: "atoms",
                    reason: "the law is transient to the left; T_1 is infinite with positive probability".into(),
                }));
            }
            let opts = DecompositionOptions {
                step_cap: config.step_cap,
                generation_cap: config.generation_cap,
                max_terms: config.max_terms,
                rel_tol: config.rel_tol,
            };
            finish(value(&compare_decomposition(law, config.n_samples, key(config), &opts)?)?, 0)
        }
        "simulate" => simulate(config, law, started, threads),
        other => Err(CliError::Validation(format!("unknown command `{other}`"))),
    }
}

fn value(x: &impl Serialize) -> Result<serde_json::Value, CliError> {
    serde_json::to_value(x).map_err(|e| CliError::Io(e.to_string()))
}

fn key(config: &RunConfig) -> StreamKey {
    StreamKey::new(config.seed)
}

fn require_conditions(law: &EnvironmentLaw) -> Result<(), CliError> {
    let report = check_conditions(law);
    if report.all_hold() {
        Ok(())
    } else {
        Err(Error::ConditionsViolated(report.violations).into())
    }
}

fn classify(config: &RunConfig, law: &EnvironmentLaw) -> Result<bdpre::matrices::RecurrenceVerdict, CliError> {
    let est = lyapunov_top(law, config.steps, config.replicas, config.burn_in, key(config))?;
    Ok(classify_recurrence(&est, config.tolerance)?)
}

fn velocity_params(config: &RunConfig) -> VelocityParams {
    VelocityParams {
        lyapunov_steps: config.steps,
        lyapunov_replicas: config.replicas,
        burn_in: config.burn_in,
        tolerance: config.tolerance,
        max_terms: config.max_terms,
        rel_tol: config.rel_tol,
        step_cap: config.step_cap,
    }
}

fn quenched_window(config: &RunConfig, law: &EnvironmentLaw) -> Result<EnvironmentWindow, CliError> {
    let env_seed = key(config).child(tags::ENVIRONMENT).raw();
    Ok(EnvironmentWindow::new(law.clone(), env_seed, -64, 64)?)
}

#[derive(Debug, Serialize)]
struct QuantileRow {
    p: f64,
    time: f64,
}

#[derive(Debug, Serialize)]
struct PassageSummary {
    target: i64,
    n_samples: u64,
    completed: u64,
    censored: u64,
    censoring_rate: f64,
    mean: f64,
    std_error: f64,
    mean_steps: f64,
    quantiles: Vec<QuantileRow>,
    environment_seed: u64,
}

fn passage(config: &RunConfig, law: &EnvironmentLaw, dump: Option<&Path>) -> Result<PassageSummary, CliError> {
    require_conditions(law)?;
    let window = quenched_window(config, law)?;
    let base = key(config).child(tags::DIRECT);
    let samples = map_replicas(config.n_samples, |r| first_passage_time(&window, config.target, base.child(r), config.step_cap))
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?;
    if let Some(path) = dump {
        let mut out = PathDump::open(Some(path))?;
        for r in 0..config.n_samples {
            let p = simulate_path(&window, 0, StopRule::HitState(config.target), config.step_cap, base.child(r))?;
            out.write_path(r, &p)?;
        }
        out.finish()?;
    }
    let mut times: Vec<f64> = samples.iter().filter(|p| !p.censored).map(|p| p.time).collect();
    times.sort_by(f64::total_cmp);
    let censored = samples.iter().filter(|p| p.censored).count() as u64;
    let (mean, std_error) = mean_and_se(&times);
    let steps: Vec<f64> = samples.iter().filter(|p| !p.censored).map(|p| p.steps as f64).collect();
    Ok(PassageSummary {
        target: config.target,
        n_samples: config.n_samples,
        completed: times.len() as u64,
        censored,
        censoring_rate: censored as f64 / config.n_samples as f64,
        mean,
        std_error,
        mean_steps: mean_and_se(&steps).0,
        quantiles: QUANTILES.iter().map(|&p| QuantileRow { p, time: quantile(&times, p) }).collect(),
        environment_seed: window.seed(),
    })
}

#[derive(Debug, Serialize)]
struct SimulateSummary {
    paths: u64,
    horizon: f64,
    censored: u64,
    environment_seed: u64,
}

/// Paths go to `output_path` (or stdout) as CSV; with an output path, the
/// report lands next to it as `<output_path>.json`.
fn simulate(config: &RunConfig, law: &EnvironmentLaw, started: Instant, threads: usize) -> Result<u8, CliError> {
    require_conditions(law)?;
    let window = quenched_window(config, law)?;
    let base = key(config).child(tags::PATHS);
    let paths = map_replicas(config.n_paths, |r| {
        simulate_path(&window, 0, StopRule::TimeHorizon(config.horizon), config.step_cap, base.child(r))
    })
    .into_iter()
    .collect::<Result<Vec<_>, _>>()?;
    let mut out = PathDump::open(config.output_path.as_deref().map(Path::new))?;
    for (r, p) in paths.iter().enumerate() {
        out.write_path(r as u64, p)?;
    }
    out.finish()?;
    if let Some(path) = &config.output_path {
        let summary = SimulateSummary {
            paths: config.n_paths,
            horizon: config.horizon,
            censored: paths.iter().filter(|p| p.is_censored()).count() as u64,
            environment_seed: window.seed(),
        };
        let report = Report {
            command: "simulate",
            version: bdpre::VERSION,
            seed: config.seed,
            threads,
            parallel: bdpre::par::is_parallel(),
            duration_seconds: started.elapsed().as_secs_f64(),
            config,
            result: summary,
        };
        emit(&render(&report, OutputFormat::Json)?, Some(&format!("{path}.json")))?;
    }
    Ok(0)
}
