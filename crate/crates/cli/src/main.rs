use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use erwre::classifier;
use erwre::env_model::EnvironmentSpec;
use erwre::harness::{run_experiment, Agreement, ExperimentConfig, Overrides};
use erwre::moments::{self, moment_report};
use erwre::parallel::{Execution, THREADS_ENV};
use erwre::suite::{run_suite, SuiteOptions};
use erwre::Error;

/// Excited random walks in random environments: classify, simulate, validate.
#[derive(Parser)]
#[command(name = "erwre", version)]
struct Cli {
    /// Print errors as a JSON object on stderr.
    #[arg(long, global = true)]
    json_errors: bool,

    /// Worker threads for replica fan-out.
    #[arg(long, global = true, env = THREADS_ENV)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the verdict and moment report of a spec.
    Classify { spec: PathBuf },
    /// Run an experiment config.
    Simulate {
        config: PathBuf,
        #[command(flatten)]
        overrides: OverrideArgs,
    },
    /// Solve E[rho^beta log rho] = 0 for a spec.
    Beta {
        spec: PathBuf,
        #[arg(long, default_value_t = moments::DEFAULT_BETA_TOL)]
        tol: f64,
    },
    /// Run an experiment and fail unless it agrees with the verdict.
    Validate {
        config: PathBuf,
        #[command(flatten)]
        overrides: OverrideArgs,
    },
    /// Run the acceptance battery.
    Suite {
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Directory for the CSV files and suite.json.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        skip_determinism: bool,
        /// Small budgets; for smoke testing only.
        #[arg(long)]
        quick: bool,
    },
}

#[derive(clap::Args)]
struct OverrideArgs {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    replicas: Option<u64>,
    #[arg(long)]
    horizon: Option<u64>,
}

/// Non-error failure: the run completed but a check did not hold.
const EXIT_DISAGREES: u8 = 1;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            if cli.json_errors {
                let j = serde_json::json!({ "error": e.kind(), "message": e.to_string(), "exit_code": e.exit_code() });
                eprintln!("{j}");
            } else {
                eprintln!("error: {e}");
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn read_spec(path: &Path) -> Result<EnvironmentSpec, Error> {
    EnvironmentSpec::from_json(&std::fs::read_to_string(path)?)
}

fn load(path: &Path, o: &OverrideArgs, threads: Option<usize>) -> Result<ExperimentConfig, Error> {
    ExperimentConfig::load(path, Overrides { seed: o.seed, replicas: o.replicas, horizon: o.horizon, threads })
}

fn print_json(v: &serde_json::Value) {
    println!("{}", serde_json::to_string_pretty(v).expect("json"));
}

fn run(cli: &Cli) -> Result<u8, Error> {
    match &cli.command {
        Command::Classify { spec } => {
            let spec = read_spec(spec)?;
            let report = moment_report(&spec, None);
            let verdict = classifier::classify(&report);
            print_json(&serde_json::json!({ "verdict": verdict, "moments": report.to_json_value() }));
            Ok(0)
        }
        Command::Beta { spec, tol } => {
            let spec = read_spec(spec)?;
            let (beta, gamma) = moments::solve_beta(&spec, *tol)?;
            let residual = moments::h(&spec, beta)?;
            print_json(&serde_json::json!({ "beta": beta, "gamma": gamma, "residual": residual, "tol": tol }));
            Ok(0)
        }
        Command::Simulate { config, overrides } => {
            let report = run_experiment(&load(config, overrides, cli.threads)?)?;
            println!("{}", report.to_json());
            Ok(0)
        }
        Command::Validate { config, overrides } => {
            let report = run_experiment(&load(config, overrides, cli.threads)?)?;
            println!("{}", report.to_json());
            eprintln!("{:?}: {}", report.agreement, report.agreement_detail);
            Ok(if report.agreement == Agreement::Inconsistent { EXIT_DISAGREES } else { 0 })
        }
        Command::Suite { seed, out, skip_determinism, quick } => {
            let opts = SuiteOptions {
                seed: *seed,
                out_dir: out.clone(),
                exec: cli.threads.map_or(Execution::Auto, |n| Execution::Parallel(Some(n))),
                quick: *quick,
                check_determinism: !skip_determinism,
            };
            let report = run_suite(&opts)?;
            for c in &report.criteria {
                println!("[{}] {:>2} {}: {} (target {})", if c.passed { "PASS" } else { "FAIL" }, c.id, c.name, c.measured, c.target);
            }
            println!("{:.1} s", report.elapsed_seconds);
            Ok(if report.all_passed() { 0 } else { EXIT_DISAGREES })
        }
    }
}
