use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use log::{error, warn};

use mia_audit::attacks::AttackKind;
use mia_audit::eval::SweepGrid;

mod config;
mod pipeline;

use config::{ConfigError, RunConfig};
use pipeline::{default_grid, write_error_report, Pipeline, PipelineError, Stage};

/// Membership inference audits of language models: LOSS, reference-model
/// LiRA and the neighbourhood attack, with ROC evaluation at low FPR.
#[derive(Parser)]
#[command(name = "mia-audit", version)]
struct Cli {
    /// JSON run configuration; relative paths inside it are resolved
    /// against its directory.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for neighbour generation and scoring (default: all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Overrides the configured output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Reruns stages even when their outputs are up to date.
    #[arg(long, global = true)]
    force: bool,
    /// Dataset format.
    #[arg(long, global = true, value_parser = ["jsonl", "lines", "plaintext-lines"])]
    format: Option<String>,
    /// Sequence loss reduction.
    #[arg(long = "loss", global = true, value_parser = ["mean", "sum"])]
    reduction: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Split the dataset into members, nonmembers and reference pool.
    Split,
    /// Fit the built-in n-gram target, reference and substitution models.
    FitNgram,
    /// Generate neighbours for every member and nonmember.
    Neighbours,
    /// Score every member and nonmember with one attack.
    Attack { kind: AttackArg },
    /// Evaluate every configured attack: report.json, roc.csv, report.md.
    Evaluate,
    /// Sweep the neighbourhood attack over neighbour and replacement counts.
    Ablate {
        /// Neighbour counts, comma separated (default: config, else 5,10,25,50,100).
        #[arg(long, value_delimiter = ',')]
        n: Option<Vec<usize>>,
        /// Replacement counts, comma separated (default: config, else 1).
        #[arg(long, value_delimiter = ',')]
        m: Option<Vec<usize>>,
    },
    /// Check that the configured model servers are healthy.
    ServerCheck {
        /// Server to check instead of the configured one.
        #[arg(long)]
        endpoint: Option<String>,
    },
    /// Run every stage the configuration asks for.
    Run,
    /// Print the effective configuration.
    ShowConfig,
}

#[derive(Clone, Copy, ValueEnum)]
enum AttackArg {
    Loss,
    Lira,
    Neighbourhood,
}

impl From<AttackArg> for AttackKind {
    fn from(a: AttackArg) -> Self {
        match a {
            AttackArg::Loss => AttackKind::Loss,
            AttackArg::Lira => AttackKind::Lira,
            AttackArg::Neighbourhood => AttackKind::Neighbourhood,
        }
    }
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Self::Split => "split",
            Self::FitNgram => "fit-ngram",
            Self::Neighbours => "neighbours",
            Self::Attack { .. } => "attack",
            Self::Evaluate => "evaluate",
            Self::Ablate { .. } => "ablate",
            Self::ServerCheck { .. } => "server-check",
            Self::Run => "run",
            Self::ShowConfig => "show-config",
        }
    }
}

fn effective_config(cli: &Cli) -> Result<RunConfig, ConfigError> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(out) = &cli.out {
        config.output_dir = out.clone();
    }
    if let Some(f) = &cli.format {
        config.dataset.format = f.clone();
    }
    if let Some(r) = &cli.reduction {
        config.reduction = r.clone();
    }
    if let Command::Ablate { n, m } = &cli.command {
        if n.is_some() || m.is_some() {
            let base = config.ablation.clone().unwrap_or_else(default_grid);
            config.ablation = Some(SweepGrid {
                n: n.clone().unwrap_or(base.n),
                m: m.clone().unwrap_or(base.m),
            });
        }
    }
    config.apply_environment();
    Ok(config)
}

fn configure_workers(workers: Option<usize>) {
    let Some(n) = workers else { return };
    #[cfg(feature = "parallel")]
    if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
        warn!("cannot size the worker pool: {e}");
    }
    #[cfg(not(feature = "parallel"))]
    if n > 1 {
        warn!("built without the parallel feature; --workers {n} is ignored");
    }
}

fn execute(cli: &Cli, config: RunConfig) -> Result<(), PipelineError> {
    if let Command::ShowConfig = cli.command {
        println!("{}", serde_json::to_string_pretty(&config).expect("json"));
        return Ok(());
    }
    if let Command::ServerCheck { endpoint } = &cli.command {
        // only the oracle settings matter here
        let pipeline = Pipeline::new_unchecked(config);
        let health = pipeline.server_check(endpoint.as_deref())?;
        println!("{}", serde_json::to_string_pretty(&health).expect("json"));
        return Ok(());
    }
    let mut pipeline = Pipeline::new(config, cli.force)?;
    match &cli.command {
        Command::Split => pipeline.ensure(Stage::Split),
        Command::FitNgram => pipeline.ensure(Stage::Fit),
        Command::Neighbours => pipeline.ensure(Stage::Neighbours),
        Command::Attack { kind } => pipeline.ensure(Stage::Attack((*kind).into())),
        Command::Evaluate => pipeline.ensure(Stage::Evaluate),
        Command::Ablate { .. } => pipeline.ensure(Stage::Ablate),
        Command::Run => pipeline.run_all(),
        Command::ServerCheck { .. } | Command::ShowConfig => unreachable!("handled above"),
    }?;
    let stale = pipeline.out().join("error.json");
    if stale.exists() {
        let _ = std::fs::remove_file(stale);
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    configure_workers(cli.workers);

    let result = effective_config(&cli).map_err(PipelineError::from);
    let out = match &result {
        Ok(c) => c.output_dir.clone(),
        Err(_) => cli.out.clone().unwrap_or_else(|| PathBuf::from("out")),
    };
    match result.and_then(|config| execute(&cli, config)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e}");
            for d in e.details() {
                error!("  {d}");
            }
            write_error_report(&out, &e, cli.command.name());
            ExitCode::from(if matches!(e, PipelineError::Config(_) | PipelineError::Usage(_)) { 2 } else { 1 })
        }
    }
}
