//! `potwell` — potential-well laboratory CLI.
//!
//! Exit codes: 0 success, 1 operational error, 2 theorem-check failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use potwell::harness::{
    cmd_experiment, cmd_simulate, cmd_well, ExperimentKind, SimConfig, U0Source,
};

#[derive(Parser)]
#[command(name = "potwell", about = "Potential-well laboratory for a nonlocal heat equation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON configuration file; defaults apply for missing fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (must exist); overrides the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// RNG seed; overrides the config.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate C*, write well.json, maximizer.pwf and d_of_delta.csv.
    Well {
        #[command(flatten)]
        common: Common,
    },
    /// Integrate the flow from initial data and record the trajectory.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Initial data: a checkpoint path or builtin:scaled-maximizer:<s>.
        #[arg(long)]
        u0: Option<String>,
    },
    /// Run a theorem-level experiment and write its report.
    Experiment {
        #[command(flatten)]
        common: Common,
        /// vacuum | threshold | rates | critical (default from config).
        which: Option<String>,
    },
}

fn resolve_config(common: &Common) -> potwell::Result<SimConfig> {
    let mut cfg = match &common.config {
        Some(path) => SimConfig::from_file(path)?,
        None => SimConfig::default(),
    };
    if let Some(out) = &common.out {
        cfg.out_dir = out.clone();
    }
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn dispatch(cli: Cli) -> potwell::Result<bool> {
    match cli.command {
        Command::Well { common } => {
            let cfg = resolve_config(&common)?;
            cmd_well(&cfg)?;
            Ok(true)
        }
        Command::Simulate { common, u0 } => {
            let cfg = resolve_config(&common)?;
            let spec = u0.or_else(|| cfg.u0.clone()).ok_or_else(|| {
                potwell::Error::Config("no initial data: pass --u0 or set it in the config".into())
            })?;
            let source: U0Source = spec.parse()?;
            let outcome = cmd_simulate(&cfg, &source)?;
            eprintln!("outcome: {outcome:?}");
            Ok(true)
        }
        Command::Experiment { common, which } => {
            let cfg = resolve_config(&common)?;
            let kind = match which {
                Some(s) => s.parse::<ExperimentKind>()?,
                None => cfg.experiment.which.ok_or_else(|| {
                    potwell::Error::Config(
                        "no experiment selected: pass one or set experiment.which".into(),
                    )
                })?,
            };
            let passed = cmd_experiment(&cfg, kind)?;
            if !passed {
                eprintln!("experiment {kind:?}: theorem-level check FAILED");
            }
            Ok(passed)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = dispatch(cli);
    if let Err(e) = &result {
        eprintln!("error: {e}");
    }
    ExitCode::from(potwell::harness::exit_code_for(&result) as u8)
}
