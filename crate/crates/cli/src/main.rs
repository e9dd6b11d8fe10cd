//! `actcomp`: run activation-compression experiments from a TOML config.

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use actcomp::harness::{parse_config_for_mode, run, Mode, Overrides};
use actcomp::Error;
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "actcomp",
    version,
    about = "Activation compression for model-parallel training: simulation and cost prediction"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run compressed tensor/pipeline-parallel forward passes and report fidelity and bytes.
    Simulate(Common),
    /// Evaluate the analytical cost model and scaling tables.
    Predict(Common),
    /// Fit cost coefficients to a measurements CSV.
    Fit(Common),
    /// Time encode and decode of each configured compressor.
    Bench(Common),
    /// Singular-value spectrum of a matrix or activation.
    Spectrum(Common),
}

#[derive(Args)]
struct Common {
    /// TOML experiment config; defaults apply when omitted.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Cost coefficient file, replacing the config's `coeffs`.
    #[arg(long)]
    coeffs: Option<PathBuf>,
    /// Master seed, replacing the config's `seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Report path. The report goes to stdout when neither this nor the config names one.
    #[arg(long, short)]
    out: Option<PathBuf>,
    /// Timeline trace path.
    #[arg(long)]
    trace: Option<PathBuf>,
}

impl Command {
    fn split(self) -> (Mode, Common) {
        match self {
            Command::Simulate(c) => (Mode::Simulate, c),
            Command::Predict(c) => (Mode::Predict, c),
            Command::Fit(c) => (Mode::Fit, c),
            Command::Bench(c) => (Mode::Bench, c),
            Command::Spectrum(c) => (Mode::Spectrum, c),
        }
    }
}

fn execute(mode: Mode, args: Common) -> Result<(), Error> {
    let (text, origin) = match &args.config {
        Some(path) => (
            std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?,
            path.display().to_string(),
        ),
        None => (String::new(), "<defaults>".to_string()),
    };
    let overrides = Overrides {
        seed: args.seed,
        coeffs: args.coeffs,
        out: args.out,
        trace: args.trace,
    };
    let spec = parse_config_for_mode(&text, &origin, mode, &overrides)?;
    log::info!("running {} with seed {}", mode.name(), spec.seed);
    let output = run(&spec)?;
    if spec.trace.is_some() && output.trace.is_none() {
        log::warn!("{} mode produces no trace; --trace ignored", mode.name());
    }
    output.write_files()?;
    if spec.out.is_none() {
        let json = output.report.to_json()?;
        std::io::stdout()
            .write_all(json.as_bytes())
            .map_err(|e| Error::io("<stdout>", e))?;
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("ACTCOMP_LOG", "warn")).init();
    let cli = Cli::parse();
    let (mode, args) = cli.command.split();
    match execute(mode, args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let message = e.to_string().split_whitespace().collect::<Vec<_>>().join(" ");
            eprintln!("error[{}]: {message}", e.code());
            ExitCode::FAILURE
        }
    }
}
