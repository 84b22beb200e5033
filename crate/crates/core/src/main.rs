use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};

use infillgp::harness::{exit_code, load_config, run_command};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Command {
    Simulate,
    Estimate,
    Mcmc,
    Predict,
    Rates,
    Ingest,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Estimate => "estimate",
            Command::Mcmc => "mcmc",
            Command::Predict => "predict",
            Command::Rates => "rates",
            Command::Ingest => "ingest",
        }
    }
}

/// Fixed-domain inference for Gaussian process regression with a nugget.
#[derive(Debug, Parser)]
#[command(name = "infillgp", version)]
struct Cli {
    #[arg(value_enum)]
    command: Command,
    /// Experiment configuration (JSON, "schema": 1).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides the config's "out".
    #[arg(long)]
    out: Option<PathBuf>,
    /// Master seed; overrides the config's "seed".
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for replicate-level parallelism.
    #[arg(long)]
    threads: Option<usize>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    if let Some(k) = cli.threads {
        if k == 0 || rayon::ThreadPoolBuilder::new().num_threads(k).build_global().is_err() {
            eprintln!("error: cannot start a pool with {k} threads");
            return ExitCode::from(2);
        }
    }
    let result = load_config(&cli.config).and_then(|mut cfg| {
        if let Some(s) = cli.seed {
            cfg.seed = s;
        }
        let out = cli.out.clone().or_else(|| cfg.out.clone()).unwrap_or_else(|| PathBuf::from("out"));
        run_command(cli.command.name(), &cfg, &out)
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
