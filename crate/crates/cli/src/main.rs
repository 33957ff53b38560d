use std::io;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use groupcast::model::Mode;
use groupcast::panel::PanelKind;
use groupcast_cli::{
    cmd_evaluate, cmd_panel_validate, cmd_report, cmd_synth, cmd_train, CliResult,
    EvaluateOptions, Exit, Failure, RunConfig, Stub,
};

/// Group-attention quantile forecaster: synthetic corpora, training and
/// rolling multivariate versus univariate evaluation.
#[derive(Parser)]
#[command(name = "groupcast", version)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON run configuration; defaults apply to every omitted key.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one configuration value, e.g. `--set train.lr=1e-3`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
    /// Master seed for generation, initialization and batch order.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Output directory (default: config `out_dir`, then $GROUPCAST_OUT).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic corpus and provenance files.
    Synth,
    /// Train the model on the corpus and write a checkpoint.
    Train {
        /// Continue from the configured checkpoint.
        #[arg(long)]
        resume: bool,
    },
    /// Run the rolling grid and emit records and artifacts.
    Evaluate {
        /// Restrict to these modes (repeatable).
        #[arg(long = "mode", value_parser = parse_mode)]
        modes: Vec<Mode>,
        /// Bypass the model with a self-test forecaster.
        #[arg(long, value_parser = parse_stub)]
        stub: Option<Stub>,
        /// Print grid size and origin counts without forecasting.
        #[arg(long)]
        dry_run: bool,
    },
    /// Rebuild artifacts from a records file.
    Report {
        /// Records file (default: the configured one).
        #[arg(long)]
        records: Option<PathBuf>,
    },
    /// Panel file utilities.
    Panel {
        #[command(subcommand)]
        command: PanelCommand,
    },
}

#[derive(Subcommand)]
enum PanelCommand {
    /// Check a panel CSV against its schema and print a summary.
    Validate {
        path: PathBuf,
        #[arg(long, value_parser = parse_kind)]
        kind: PanelKind,
    },
}

fn parse_mode(s: &str) -> Result<Mode, String> {
    s.parse().map_err(|e: groupcast::Error| e.to_string())
}

fn parse_stub(s: &str) -> Result<Stub, String> {
    s.parse().map_err(|e: groupcast::Error| e.to_string())
}

fn parse_kind(s: &str) -> Result<PanelKind, String> {
    s.parse().map_err(|e: groupcast::Error| e.to_string())
}

fn config(common: &Common) -> CliResult<RunConfig> {
    let mut cfg = RunConfig::load(common.config.as_deref(), &common.set)
        .map_err(|e| Failure::new(Exit::Config, e))?;
    if let Some(seed) = common.seed {
        cfg.set_seed(seed);
    }
    if let Some(w) = common.workers {
        cfg.workers = Some(w);
    }
    if let Some(o) = &common.out {
        cfg.out_dir = Some(o.clone());
    }
    Ok(cfg)
}

fn run(cli: Cli) -> CliResult<()> {
    let out = &mut io::stdout().lock();
    match cli.command {
        Command::Panel {
            command: PanelCommand::Validate { path, kind },
        } => cmd_panel_validate(&path, kind, out),
        Command::Synth => cmd_synth(&config(&cli.common)?, out).map(drop),
        Command::Train { resume } => cmd_train(&config(&cli.common)?, resume, out).map(drop),
        Command::Evaluate {
            modes,
            stub,
            dry_run,
        } => {
            let opts = EvaluateOptions {
                modes,
                stub,
                dry_run,
            };
            cmd_evaluate(&config(&cli.common)?, &opts, out).map(drop)
        }
        Command::Report { records } => {
            cmd_report(&config(&cli.common)?, records.as_deref(), out).map(drop)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            log::error!("{f}");
            ExitCode::from(f.exit.code())
        }
    }
}
