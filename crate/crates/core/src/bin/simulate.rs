use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use urnmarket::config::parse_config;
use urnmarket::harness;

const EXIT_CONFIG: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

/// Run a reinforcement experiment described by a JSON config.
#[derive(Parser, Debug)]
#[command(name = "simulate", version)]
struct Cli {
    /// Experiment config (strict JSON).
    config: PathBuf,
    /// Output directory. Overrides `output_dir` from the config.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Worker threads. Results do not depend on this value.
    #[arg(long, value_name = "N", value_parser = clap::value_parser!(u64).range(1..))]
    threads: Option<u64>,
    /// Replace the config's master seed.
    #[arg(long, value_name = "OVERRIDE")]
    seed: Option<u64>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let text = match std::fs::read_to_string(&cli.config) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: cannot read {}: {e}", cli.config.display());
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    let mut config = match parse_config(&text) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: invalid config {}:", cli.config.display());
            match &e {
                urnmarket::Error::Config(errs) => {
                    for issue in errs.issues() {
                        eprintln!("  {issue}");
                    }
                }
                other => eprintln!("  {other}"),
            }
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    if let Some(seed) = cli.seed {
        config.master_seed = seed;
    }
    let out = cli
        .out
        .or_else(|| config.output_dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"));
    let threads = cli.threads.map(|n| n as usize);
    match harness::run(&config, &out, threads) {
        Ok(bundle) => {
            println!("{}", bundle.summary(config.mode));
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_config() {
                ExitCode::from(EXIT_CONFIG)
            } else {
                ExitCode::from(EXIT_RUNTIME)
            }
        }
    }
}
