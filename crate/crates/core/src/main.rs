use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use vrdqn::analysis::{evaluate_certificate, TheoryParams};
use vrdqn::config::{parse_config, ExperimentConfig};
use vrdqn::experiment::{self, resolve_output_dir, Method};
use vrdqn::{Error, Result};

/// Decentralized variance-reduced quasi-Newton simulator.
#[derive(Debug, Parser)]
#[command(version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run an experiment and write metrics, certificate and metadata.
    Run {
        config: PathBuf,
        /// Overrides `run.output_dir`.
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Run several methods on one config and write a combined CSV.
    Compare {
        config: PathBuf,
        /// Comma separated: framework, gt_svrg, dgd, gradient_tracking.
        #[arg(short, long, value_delimiter = ',', required = true, num_args = 1..)]
        methods: Vec<String>,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Evaluate the linear-rate certificate for a config or an explicit
    /// parameter set.
    Certify(CertifyArgs),
    /// Check topology and problem assumptions without running.
    Validate { config: PathBuf },
}

#[derive(Debug, Args)]
struct CertifyArgs {
    #[arg(conflicts_with_all = ["alpha", "period", "b_rate", "l", "mu", "sigma", "m1", "m2"])]
    config: Option<PathBuf>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    period: Option<f64>,
    #[arg(long, default_value_t = 0.0)]
    b_rate: f64,
    #[arg(long)]
    l: Option<f64>,
    #[arg(long)]
    mu: Option<f64>,
    #[arg(long, default_value_t = 0.0)]
    sigma: f64,
    #[arg(long, default_value_t = 1.0)]
    m1: f64,
    #[arg(long, default_value_t = 1.0)]
    m2: f64,
}

fn load(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    parse_config(&text)
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn output_dir(cfg: &ExperimentConfig, flag: Option<PathBuf>) -> PathBuf {
    resolve_output_dir(&flag.unwrap_or_else(|| cfg.run.output_dir.clone()))
}

fn certify(args: CertifyArgs) -> Result<()> {
    let cert = match args.config {
        Some(path) => experiment::certify(&load(&path)?)?,
        None => {
            let need = |v: Option<f64>, name: &str| v.ok_or_else(|| Error::Config(format!("--{name} is required without a config")));
            let alpha = need(args.alpha, "alpha")?;
            let l = need(args.l, "l")?;
            let mu = need(args.mu, "mu")?;
            let mut params = TheoryParams::new(alpha, 1.0, args.b_rate, l, mu, args.sigma, args.m1, args.m2)?;
            params.period = match args.period {
                Some(t) => t,
                None => params.min_period_ceil() as f64,
            };
            evaluate_certificate(&params)
        }
    };
    print_json(&cert)?;
    match (cert.gate.passed, cert.passed) {
        (true, true) => Ok(()),
        (false, _) => Err(Error::GateFailed(cert.gate.summary())),
        (true, false) => Err(Error::GateFailed("certificate checks failed".into())),
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run { config, output } => {
            let cfg = load(&config)?;
            let dir = output_dir(&cfg, output);
            let report = experiment::run_experiment(&cfg, &dir)?;
            if !report.gate.passed {
                eprintln!("warning: exploratory run outside the convergence guarantee: {}", report.gate.summary());
            }
            print_json(&report.runs)?;
            eprintln!("wrote {}", dir.display());
        }
        Command::Compare { config, methods, output } => {
            let cfg = load(&config)?;
            let methods: Vec<Method> = methods.iter().map(|m| m.trim().parse()).collect::<Result<_>>()?;
            let dir = output_dir(&cfg, output);
            let rows = experiment::compare(&methods, &cfg, &dir)?;
            eprintln!("wrote {} rows to {}", rows.len(), dir.join(experiment::COMPARE_FILE).display());
        }
        Command::Certify(args) => certify(args)?,
        Command::Validate { config } => {
            let report = experiment::validate(&load(&config)?)?;
            print_json(&report)?;
            if !report.passed {
                let clause = report.assumption3.first_failure().map_or("unknown", |c| c.name);
                return Err(Error::MixingMatrix { clause, detail: "see report".into() });
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
