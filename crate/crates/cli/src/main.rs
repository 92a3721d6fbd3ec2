use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use lls_cli::commands::{cmd_calibrate, cmd_params, cmd_parse, cmd_run, load_config, Overrides};
use lls_cli::config::parse_formats;
use lls_cli::CliError;

#[derive(Parser)]
#[command(name = "lls", version, about = "Long-lived singlet state simulations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Run configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the experiment seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output formats, e.g. `csv` or `csv,svg`.
    #[arg(long, global = true)]
    format: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Print resonance parameters and Hamiltonian eigenvalues.
    Params,
    /// Run the configured experiment and write its outputs.
    Run,
    /// Parse a pulse program and print its canonical form.
    Parse { file: PathBuf },
    /// Calibrate relaxation rates to the configured lifetimes.
    Calibrate,
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Config("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(e.to_string()))?;
    }
    let svg = cli
        .format
        .as_deref()
        .map(|f| parse_formats(&f.split(',').map(str::trim).collect::<Vec<_>>()))
        .transpose()?;
    let config = || {
        cli.config
            .as_deref()
            .ok_or_else(|| CliError::Config("--config is required".into()))
            .and_then(load_config)
    };
    let mut out = std::io::stdout().lock();
    match &cli.command {
        Command::Params => cmd_params(&config()?.0, &mut out),
        Command::Calibrate => cmd_calibrate(&config()?.0, &mut out),
        Command::Parse { file } => cmd_parse(file, &mut out),
        Command::Run => {
            let (cfg, hash) = config()?;
            let ov = Overrides {
                seed: cli.seed,
                out: cli.out.clone(),
                svg,
            };
            cmd_run(&cfg, &hash, &ov, &mut out).map(|_| ())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if let CliError::Simulation {
                diagnostics: Some(p), ..
            } = &e
            {
                eprintln!("diagnostics written to {}", p.display());
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
