//! `steinbound` command-line front end.
//!
//! Usage: `steinbound <command> --config <path> [--seed N] [--out <path>]`.
//!
//! Exit codes: 0 success, 1 computational error, 2 configuration error.
//! Result files are written only after the whole computation succeeds, and
//! are byte-identical for identical config + seed regardless of
//! `STEINBOUND_THREADS`.

// Validation checks are written as `!(x >= threshold)` so that NaN
// arguments are rejected along with out-of-range ones.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::Parser;
use serde_json::{json, Value};

use steinbound_core::categorical::Categorical;
use steinbound_core::concentration::canonical_mgf_check;
use steinbound_core::opl::{opl_lower_bound, optimize_posterior};
use steinbound_core::pac_bayes::pb_mgf_check;
use steinbound_core::report::BoundReport;
use steinbound_core::rng::derive_seed;
use steinbound_core::sim::{
    coverage, generate_logs, loss_bounds_experiment, pb_mixture_triples,
    reward_mean_canonical_pairs, TrialRecord,
};
use steinbound_core::wis::opev_lower_bound;

use config::{bound_spec, resolve, CommandName, ExperimentConfig, Resolved};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
enum CliCommand {
    Eval,
    Learn,
    Coverage,
    VerifyCanonical,
    GenBound,
}

impl From<CliCommand> for CommandName {
    fn from(value: CliCommand) -> Self {
        match value {
            CliCommand::Eval => CommandName::Eval,
            CliCommand::Learn => CommandName::Learn,
            CliCommand::Coverage => CommandName::Coverage,
            CliCommand::VerifyCanonical => CommandName::VerifyCanonical,
            CliCommand::GenBound => CommandName::GenBound,
        }
    }
}

/// Compute semi-empirical concentration bounds on bandit data and verify
/// their guarantees by Monte Carlo coverage experiments.
#[derive(Debug, Parser)]
#[command(name = "steinbound", version)]
struct Cli {
    /// Experiment to run; must match the config file's `command` field.
    #[arg(value_enum)]
    command: CliCommand,

    /// Path to the JSON experiment configuration.
    #[arg(long)]
    config: PathBuf,

    /// Override the config file's seed.
    #[arg(long)]
    seed: Option<u64>,

    /// Override the config file's output path (extension-less base).
    #[arg(long)]
    out: Option<PathBuf>,
}

enum AppError {
    Config(String),
    Compute(String),
}

impl From<steinbound_core::Error> for AppError {
    fn from(e: steinbound_core::Error) -> Self {
        AppError::Compute(e.to_string())
    }
}

impl From<std::io::Error> for AppError {
    fn from(e: std::io::Error) -> Self {
        AppError::Compute(format!("io error: {e}"))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(AppError::Config(msg)) => {
            eprintln!("config error:\n{msg}");
            ExitCode::from(2)
        }
        Err(AppError::Compute(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> Result<(), AppError> {
    let start = Instant::now();
    let text = std::fs::read_to_string(&cli.config)
        .map_err(|e| AppError::Config(format!("{}: {e}", cli.config.display())))?;
    let parsed: ExperimentConfig = serde_json::from_str(&text)
        .map_err(|e| AppError::Config(format!("{}: {e}", cli.config.display())))?;
    let mut resolved = resolve(&parsed).map_err(|errors| AppError::Config(errors.join("\n")))?;

    let expected: CommandName = cli.command.into();
    if resolved.command != expected {
        return Err(AppError::Config(format!(
            "command: config file says {:?} but the CLI invoked {:?}",
            resolved.command.as_str(),
            expected.as_str()
        )));
    }
    if let Some(seed) = cli.seed {
        resolved.seed = seed;
    }
    if let Some(out) = cli.out {
        resolved.out = out;
    }

    let threads = match std::env::var("STEINBOUND_THREADS") {
        Err(_) => None,
        Ok(raw) => match raw.parse::<usize>() {
            Ok(t) if t >= 1 => Some(t),
            _ => {
                return Err(AppError::Config(format!(
                    "STEINBOUND_THREADS: must be a positive integer, got {raw:?}"
                )))
            }
        },
    };

    let (result, records) = match threads {
        Some(t) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(t)
                .build()
                .map_err(|e| AppError::Compute(e.to_string()))?;
            pool.install(|| execute(&resolved))?
        }
        None => execute(&resolved)?,
    };

    let doc = json!({
        "schema_version": 1,
        "command": resolved.command.as_str(),
        "params": params_echo(&resolved),
        "result": result,
    });
    let result_path = output::write_result(&resolved.out, &doc)?;
    println!("result: {}", result_path.display());
    if let Some(records) = records {
        let csv = output::write_trials_csv(&resolved.out, &records)?;
        println!("trials: {}", csv.display());
    }

    let manifest = json!({
        "command": resolved.command.as_str(),
        "config_path": cli.config.display().to_string(),
        "out": resolved.out.display().to_string(),
        "seed": resolved.seed,
        "code_version": env!("CARGO_PKG_VERSION"),
        "threads": threads,
        "wall_time_seconds": start.elapsed().as_secs_f64(),
    });
    let manifest_path = output::write_manifest(&resolved.out, &manifest)?;
    println!("manifest: {}", manifest_path.display());
    Ok(())
}

fn to_value<T: serde::Serialize>(value: &T) -> Value {
    serde_json::to_value(value).expect("result types serialize")
}

fn params_echo(resolved: &Resolved) -> Value {
    json!({
        "n": resolved.n,
        "seed": resolved.seed,
        "x": resolved.x,
        "y": resolved.y,
        "y_defaulted": resolved.y_defaulted,
        "y_grid": resolved.y_grid,
        "proxy_mode": to_value(&resolved.proxy_mode),
        "bound_name": resolved.bound_name,
        "trials": resolved.trials,
        "lambda_grid": resolved.lambda_grid,
        "posterior_temperature": resolved.temperature,
        "environment": to_value(&resolved.scenario.env),
        "behavior": to_value(&resolved.scenario.behavior),
        "target": resolved.scenario.target.as_ref().map(to_value),
        "class": resolved.scenario.class.as_ref().map(to_value),
        "prior": resolved.scenario.prior.as_ref().map(to_value),
        "posterior": resolved.posterior.as_ref().map(to_value),
        "learn": {
            "step_size": resolved.learn.step_size,
            "max_iters": resolved.learn.max_iters,
            "gradient_epsilon": resolved.learn.gradient_epsilon,
        },
    })
}

/// Union-bound adjustment when `y` was chosen from a grid: the
/// concentration event's budget scales with the grid size.
fn select_best_over_y_grid(mut reports: Vec<BoundReport>, grid_len: usize) -> BoundReport {
    let best = reports
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.value.total_cmp(&b.1.value))
        .map(|(i, _)| i)
        .unwrap();
    let mut report = reports.swap_remove(best);
    for event in &mut report.events {
        if event.name == "concentration" {
            event.budget *= grid_len as f64;
        }
    }
    report.failure_budget = report.events.iter().map(|e| e.budget).sum();
    report.confidence = (1.0 - report.failure_budget).max(0.0);
    report.notes.push(format!(
        "y selected from a {grid_len}-point grid (union bound)"
    ));
    report
}

type CommandOutput = (Value, Option<Vec<TrialRecord>>);

fn execute(resolved: &Resolved) -> Result<CommandOutput, AppError> {
    match resolved.command {
        CommandName::Eval => run_eval(resolved),
        CommandName::Learn => run_learn(resolved),
        CommandName::Coverage => run_coverage(resolved),
        CommandName::VerifyCanonical => run_verify_canonical(resolved),
        CommandName::GenBound => run_gen_bound(resolved),
    }
}

fn run_eval(resolved: &Resolved) -> Result<CommandOutput, AppError> {
    let scenario = &resolved.scenario;
    let data = generate_logs(&scenario.env, &scenario.behavior, resolved.n, resolved.seed)?;
    let ys: Vec<f64> = match &resolved.y_grid {
        Some(grid) => grid.clone(),
        None => vec![resolved.y],
    };
    let report = if let Some(posterior) = &resolved.posterior {
        let class = scenario.class.as_ref().expect("validated");
        let prior = scenario
            .prior
            .clone()
            .unwrap_or_else(|| Categorical::uniform(class.len()));
        let reports = ys
            .iter()
            .map(|&y| {
                opl_lower_bound(
                    &data,
                    class,
                    posterior,
                    &prior,
                    &scenario.behavior,
                    resolved.x,
                    y,
                    resolved.proxy_mode,
                    resolved.seed,
                )
            })
            .collect::<Result<Vec<_>, _>>()?;
        select_best_over_y_grid(reports, ys.len())
    } else {
        let target = scenario.target.as_ref().expect("validated");
        let reports = ys
            .iter()
            .map(|&y| {
                opev_lower_bound(
                    &data,
                    target,
                    &scenario.behavior,
                    resolved.x,
                    y,
                    resolved.proxy_mode,
                    resolved.seed,
                )
            })
            .collect::<Result<Vec<_>, _>>()?;
        select_best_over_y_grid(reports, ys.len())
    };
    Ok((json!({ "report": to_value(&report) }), None))
}

fn run_learn(resolved: &Resolved) -> Result<CommandOutput, AppError> {
    let scenario = &resolved.scenario;
    let class = scenario.class.as_ref().expect("validated");
    let prior = scenario
        .prior
        .clone()
        .unwrap_or_else(|| Categorical::uniform(class.len()));
    let data = generate_logs(&scenario.env, &scenario.behavior, resolved.n, resolved.seed)?;
    let learn_config = {
        let mut c = resolved.learn_config();
        c.seed = resolved.seed;
        c
    };
    let state = optimize_posterior(&data, class, &prior, &scenario.behavior, &learn_config)?;
    let report = opl_lower_bound(
        &data,
        class,
        &state.posterior,
        &prior,
        &scenario.behavior,
        resolved.x,
        resolved.y,
        resolved.proxy_mode,
        resolved.seed,
    )?;
    let final_objective = state.objective_trace[state.best_index];
    Ok((
        json!({
            "posterior": to_value(&state.posterior),
            "objective_trace": state.objective_trace,
            "best_index": state.best_index,
            "final_objective": final_objective,
            "report": to_value(&report),
        }),
        None,
    ))
}

fn run_coverage(resolved: &Resolved) -> Result<CommandOutput, AppError> {
    let spec = bound_spec(resolved);
    let trials = resolved.trials.expect("validated");
    let report = coverage(&spec, &resolved.scenario, resolved.n, trials, resolved.seed)?;
    let summary = json!({
        "bound": to_value(&report.bound),
        "trials": report.trials,
        "error_count": report.error_count,
        "violation_rate": report.violation_rate,
        "nominal_budget": report.nominal_budget,
        "binomial_3sigma": report.binomial_3sigma,
        "within_budget": report.within_budget(),
        "nonvacuous_fraction": report.nonvacuous_fraction,
        "reference": report.reference.as_ref().map(to_value),
    });
    Ok((summary, Some(report.records)))
}

fn run_verify_canonical(resolved: &Resolved) -> Result<CommandOutput, AppError> {
    let scenario = &resolved.scenario;
    let pairs = resolved.trials.expect("validated");
    let sampled = reward_mean_canonical_pairs(
        &scenario.env,
        &scenario.behavior,
        resolved.n,
        pairs as usize,
        resolved.seed,
    )?;
    let fixed = canonical_mgf_check(&sampled, &resolved.lambda_grid)?;
    let fixed_ok = fixed
        .per_lambda
        .iter()
        .all(|p| p.estimate <= 1.0 + 3.0 * p.std_error);

    let mixture = match &scenario.class {
        None => None,
        Some(_) => {
            let triples = pb_mixture_triples(
                scenario,
                resolved.n,
                pairs,
                resolved.temperature,
                derive_seed(resolved.seed, 1),
            )?;
            let check = pb_mgf_check(&triples, resolved.y)?;
            Some(json!({
                "estimate": check.estimate,
                "std_error": check.std_error,
                "y": resolved.y,
                "within_three_sigma_of_one": check.estimate <= 1.0 + 3.0 * check.std_error,
            }))
        }
    };

    Ok((
        json!({
            "pairs": pairs,
            "fixed": to_value(&fixed),
            "fixed_within_three_sigma_of_one": fixed_ok,
            "mixture": mixture,
        }),
        None,
    ))
}

fn run_gen_bound(resolved: &Resolved) -> Result<CommandOutput, AppError> {
    let outcome = loss_bounds_experiment(
        &resolved.scenario,
        resolved.n,
        resolved.seed,
        resolved.temperature,
        resolved.x,
        resolved.y,
    )?;
    Ok((to_value(&outcome), None))
}
