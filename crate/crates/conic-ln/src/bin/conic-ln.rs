use clap::{Parser, ValueEnum};
use conic_ln::harness::{parse_config, run_command, Cache, Command};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Clone, Copy, ValueEnum)]
enum Cmd {
    Profile,
    Spectrum,
    Indexset,
    Expand,
    Solve,
    Verify,
    Suite,
}

#[derive(Parser)]
#[command(name = "conic-ln", version, about = "Singular Loewner-Nirenberg solutions on cones")]
struct Args {
    #[arg(value_enum)]
    command: Cmd,
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `output_dir` in the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Cache directory; overrides `cache_dir` in the config.
    #[arg(long)]
    cache: Option<PathBuf>,
    /// Seed for the randomized checks; overrides `seed` in the config.
    #[arg(long)]
    seed: Option<u64>,
}

fn main() -> ExitCode {
    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) if e.use_stderr() => {
            let _ = e.print();
            return ExitCode::from(2);
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
    };
    let text = match std::fs::read_to_string(&args.config) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("cannot read {}: {e}", args.config.display());
            return ExitCode::from(2);
        }
    };
    let mut cfg = match parse_config(&text) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("{e}");
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    let out = args.out.or(cfg.output_dir.clone()).unwrap_or_else(|| PathBuf::from("out"));
    let cache = args.cache.or(cfg.cache_dir.clone()).map(Cache::new);
    let cmd = match args.command {
        Cmd::Profile => Command::Profile,
        Cmd::Spectrum => Command::Spectrum,
        Cmd::Indexset => Command::Indexset,
        Cmd::Expand => Command::Expand,
        Cmd::Solve => Command::Solve,
        Cmd::Verify => Command::Verify,
        Cmd::Suite => Command::Suite,
    };
    let output = run_command(cmd, &cfg, cache);
    for w in &output.warnings {
        eprintln!("warning: {w}");
    }
    for note in &output.notes {
        eprintln!("{note}");
    }
    for line in &output.summary {
        println!("{line}");
    }
    if let Err(e) = output.artifacts.write_to(&out) {
        eprintln!("cannot write artifacts to {}: {e}", out.display());
        return ExitCode::from(3);
    }
    match &output.error {
        None => ExitCode::SUCCESS,
        Some(e) => {
            eprintln!("error: {e}");
            ExitCode::from(output.exit_code() as u8)
        }
    }
}
