use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use spinrev::config::ExperimentConfig;
use spinrev::experiments::{run, Command};

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Cmd {
    Quench,
    Reverse,
    FreqScan,
    Scaling,
    Fit,
}

/// Disorder spin chains with random quenches and steer them back.
#[derive(Debug, Parser)]
#[command(name = "revctl", version)]
struct Args {
    #[arg(value_enum)]
    command: Cmd,
    #[arg(long)]
    config: PathBuf,
    /// Worker threads; defaults to all cores.
    #[arg(long)]
    workers: Option<usize>,
    /// Output directory; overrides the config's `output`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Added to every seed in the config.
    #[arg(long, default_value_t = 0)]
    seed_offset: u64,
}

fn main() -> ExitCode {
    let args = Args::parse();
    let command = match args.command {
        Cmd::Quench => Command::Quench,
        Cmd::Reverse => Command::Reverse,
        Cmd::FreqScan => Command::FreqScan,
        Cmd::Scaling => Command::Scaling,
        Cmd::Fit => Command::Fit,
    };
    let config = match ExperimentConfig::load(&args.config) {
        Ok(c) => c.with_seed_offset(args.seed_offset),
        Err(e) => {
            eprintln!("revctl: {e}");
            return ExitCode::from(2);
        }
    };
    if args.workers == Some(0) {
        eprintln!("revctl: --workers must be at least 1");
        return ExitCode::from(2);
    }
    let base = args.config.parent().unwrap_or(Path::new(".")).to_path_buf();
    let out = args
        .out
        .or_else(|| config.output.as_ref().map(|o| base.join(o)))
        .unwrap_or_else(|| PathBuf::from("out"));

    let pool = match rayon::ThreadPoolBuilder::new()
        .num_threads(args.workers.unwrap_or(0))
        .build()
    {
        Ok(p) => p,
        Err(e) => {
            eprintln!("revctl: {e}");
            return ExitCode::from(1);
        }
    };
    let result = pool.install(|| run(command, &config, &base));
    let output = match result {
        Ok(o) => o,
        Err(e) => {
            eprintln!("revctl {}: {e}", command.name());
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    if let Err(e) = output.write_to(&out) {
        eprintln!("revctl: {e}");
        return ExitCode::from(1);
    }
    for f in &output.files {
        println!("{}", out.join(&f.name).display());
    }
    if output.converged {
        ExitCode::SUCCESS
    } else {
        eprintln!("revctl {}: completed, but some runs did not converge", command.name());
        ExitCode::from(3)
    }
}
