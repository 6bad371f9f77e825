//! `eoslab`: runs simulations, sweeps and verification suites from a TOML
//! configuration and writes hashed, deterministic artifacts.

// `!(x > 0.0)` deliberately rejects NaN alongside non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod config;
mod emit;
mod experiments;
mod verify;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{ConfigError, Kind, Overrides, Suite};

const EXIT_CONFIG: u8 = 2;
const EXIT_DIVERGENCE: u8 = 3;
const EXIT_VERDICT: u8 = 4;

#[derive(Parser)]
#[command(name = "eoslab", version, about = "Reparameterized gradient descent laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Clone, Default)]
struct Common {
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    eta: Option<f64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for sweeps; results do not depend on it.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Override one key, e.g. `--set network.widths=[64,256]`.
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE", global = true)]
    set: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// One run of a toy model or reparameterized recursion.
    Simulate2d,
    /// Train networks and record their canonical coordinates.
    TrainNet,
    /// Attractor samples of the map f_q over a grid of q.
    SweepBifurcation,
    /// Repeat the two-dimensional run over a geometric grid of step sizes.
    SweepEta,
    /// Run a verification suite and write its report.
    Verify {
        #[arg(long, value_enum)]
        suite: Option<SuiteArg>,
    },
    /// Run a named preset.
    Preset {
        #[arg(value_parser = clap::builder::PossibleValuesParser::new(config::PRESETS))]
        name: String,
    },
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum SuiteArg {
    Linear,
    Nonlinear,
    Map,
    Hessian,
    All,
}

impl From<SuiteArg> for Suite {
    fn from(s: SuiteArg) -> Self {
        match s {
            SuiteArg::Linear => Suite::Linear,
            SuiteArg::Nonlinear => Suite::Nonlinear,
            SuiteArg::Map => Suite::Map,
            SuiteArg::Hessian => Suite::Hessian,
            SuiteArg::All => Suite::All,
        }
    }
}

fn execute(command: Command, common: Common) -> anyhow::Result<usize> {
    let mut overrides = Overrides {
        seed: common.seed,
        eta: common.eta,
        out: common.out,
        workers: common.workers,
        set: common.set,
    };
    let (kind, layer) = match &command {
        Command::Simulate2d => (Kind::Simulate2d, None),
        Command::TrainNet => (Kind::TrainNet, None),
        Command::SweepBifurcation => (Kind::SweepBifurcation, None),
        Command::SweepEta => (Kind::SweepEta, None),
        Command::Verify { .. } => (Kind::Verify, None),
        Command::Preset { name } => {
            let (kind, layer) = config::preset(name)?;
            (kind, Some(layer))
        }
    };
    if let Command::Verify { suite: Some(suite) } = command {
        let name = match Suite::from(suite) {
            Suite::Linear => "linear",
            Suite::Nonlinear => "nonlinear",
            Suite::Map => "map",
            Suite::Hessian => "hessian",
            Suite::All => "all",
        };
        overrides.set.push(format!("verify.suite=\"{name}\""));
    }
    let cfg = config::load(layer, common.config.as_deref(), &overrides)?;
    let ctx = experiments::Ctx::new(&cfg, kind)?;
    experiments::run(&ctx)
}

/// Exit status for an error: configuration problems, divergence (with its
/// step), anything else.
fn failure_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<ConfigError>().is_some() {
        return EXIT_CONFIG;
    }
    match err.downcast_ref::<eoslab::Error>() {
        Some(eoslab::Error::Divergence { .. }) => EXIT_DIVERGENCE,
        Some(eoslab::Error::Domain { .. } | eoslab::Error::NoRoot { .. }) => EXIT_CONFIG,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command, cli.common) {
        Ok(0) => ExitCode::SUCCESS,
        Ok(failed) => {
            eprintln!("error: {failed} verdict(s) failed");
            ExitCode::from(EXIT_VERDICT)
        }
        Err(err) => {
            let code = failure_code(&err);
            let label = match code {
                EXIT_CONFIG => "config error",
                EXIT_DIVERGENCE => "diverged",
                _ => "error",
            };
            eprintln!("{label}: {err:#}");
            ExitCode::from(code)
        }
    }
}
