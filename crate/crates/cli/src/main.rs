use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use wavecip::Error;
use wavecip_cli::{error_kind, exit_code, run, Command, RunConfig, RunContext};

#[derive(Parser)]
#[command(name = "wavecip", version, about = "Adaptive reconstruction of dielectric targets from backscattered data")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
    /// TOML run configuration; defaults apply to everything left out.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Overrides the configured noise seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand, Clone, Copy)]
enum Cmd {
    /// Forward solve: boundary record and field snapshots.
    Forward,
    /// Twin data on the detector plane from a known coefficient.
    Synthesize,
    /// Propagate, calibrate, immerse and complement measured data.
    Preprocess,
    /// Adaptive reconstruction.
    Invert,
    /// Target image and summary row of a reconstruction.
    Report,
}

fn load_config(cli: &Cli) -> Result<RunConfig, Error> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::from_toml(&std::fs::read_to_string(p)?)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: ConfigError: {e}");
            return ExitCode::from(3);
        }
    }
    let cmd = match cli.command {
        Cmd::Forward => Command::Forward,
        Cmd::Synthesize => Command::Synthesize,
        Cmd::Preprocess => Command::Preprocess,
        Cmd::Invert => Command::Invert,
        Cmd::Report => Command::Report,
    };
    let ctx = RunContext { out: cli.out.clone() };
    match load_config(&cli).and_then(|cfg| run(cmd, &cfg, &ctx)) {
        Ok(m) => {
            if let Some(s) = m.stop_reason {
                log::info!("{}: stopped with {s}", cmd.name());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {}: {e}", error_kind(&e));
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
