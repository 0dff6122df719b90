use std::path::PathBuf;
use std::process::ExitCode;

use beamcap_core::config::{Estimation, ExperimentConfig, Overrides, PatternKind};
use beamcap_core::experiments::{run, Subcommand};
use beamcap_core::Error;
use clap::{Args, Parser, ValueEnum};

/// Near-field MIMO capacity in a Hermite–Gaussian beamspace.
///
/// Flags override the matching keys of the config file.
#[derive(Parser)]
#[command(name = "beamcap", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Subcommand)]
enum Command {
    /// Noise power and per-pair path loss.
    LinkBudget(Common),
    /// Singular values of the antenna-domain channel.
    Native(Common),
    /// Captured power of HG modes against normalized aperture size.
    Capture(Common),
    /// Residuals of the native singular modes in truncated HG spaces.
    Project(Common),
    /// Beamspace singular values and LS estimation error.
    Beamspace(Common),
    /// Frontier-by-frontier capacity search.
    Capacity(Common),
    /// Every stage above.
    All(Common),
}

#[derive(Clone, Copy, ValueEnum)]
enum EstimationArg {
    Noiseless,
    Ls,
}

#[derive(Clone, Copy, ValueEnum)]
enum PatternArg {
    Isotropic,
    Directional,
}

#[derive(Args)]
struct Common {
    /// TOML configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (output.dir).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Noise seed (algorithm.seed).
    #[arg(long)]
    seed: Option<u64>,
    /// Absolute stopping tolerance in bits/s/Hz (algorithm.epsilon_absolute).
    #[arg(long)]
    epsilon: Option<f64>,
    /// Largest frontier of the capacity search (algorithm.hard_cap).
    #[arg(long)]
    lmax_cap: Option<usize>,
    /// Channel source for the beamspace stages (algorithm.estimation).
    #[arg(long, value_enum)]
    estimation: Option<EstimationArg>,
    /// Element pattern (algorithm.pattern).
    #[arg(long, value_enum)]
    pattern: Option<PatternArg>,
    /// Per-mode rate cap in bits/s/Hz (algorithm.mcs_cap).
    #[arg(long)]
    mcs_cap: Option<f64>,
}

impl Common {
    fn overrides(&self) -> Overrides {
        Overrides {
            out: self.out.clone(),
            seed: self.seed,
            epsilon: self.epsilon,
            lmax_cap: self.lmax_cap,
            estimation: self.estimation.map(|e| match e {
                EstimationArg::Noiseless => Estimation::Noiseless,
                EstimationArg::Ls => Estimation::Ls,
            }),
            pattern: self.pattern.map(|p| match p {
                PatternArg::Isotropic => PatternKind::Isotropic,
                PatternArg::Directional => PatternKind::Directional,
            }),
            mcs_cap: self.mcs_cap,
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 2,
        Error::Io { .. } => 1,
        _ => 3,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (cmd, common) = match &cli.command {
        Command::LinkBudget(c) => (Subcommand::LinkBudget, c),
        Command::Native(c) => (Subcommand::Native, c),
        Command::Capture(c) => (Subcommand::Capture, c),
        Command::Project(c) => (Subcommand::Project, c),
        Command::Beamspace(c) => (Subcommand::Beamspace, c),
        Command::Capacity(c) => (Subcommand::Capacity, c),
        Command::All(c) => (Subcommand::All, c),
    };
    let result = ExperimentConfig::load(&common.config).and_then(|mut cfg| {
        cfg.apply(&common.overrides())?;
        run(cmd, &cfg)
    });
    match result {
        Ok(bundle) => {
            println!("{}", bundle.dir.join("summary.json").display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("beamcap: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
