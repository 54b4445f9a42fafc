//! `ddn`: scenario generation, dataset building, training, reports,
//! closed-loop simulation, hyperparameter search and checkpoint inspection.

mod commands;
mod config;
mod parallel;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ddn_core::bandit::SigmaSource;
use ddn_core::network::LossKind;
use ddn_core::Error;

use config::RunConfig;

#[derive(Parser)]
#[command(
    name = "ddn",
    version,
    about = "Deep density networks for CTR prediction with uncertainty"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the standard simulated scenario as TOML.
    GenScenario(Common),
    /// Simulate logged traffic and write a train/validation dataset.
    BuildDataset(DatasetArgs),
    /// Train a model on a dataset and write a checkpoint.
    Train(TrainArgs),
    /// Write the uncertainty analyses of trained checkpoints as CSVs.
    Report(ReportArgs),
    /// Run closed-loop marketplace experiments.
    Simulate(SimulateArgs),
    /// Random search over network hyperparameters.
    Search(SearchArgs),
    /// Print a checkpoint's header.
    InspectCheckpoint(InspectArgs),
}

/// Flags shared by every subcommand.
#[derive(Args, Clone)]
struct Common {
    /// TOML run config; flags given on the command line win over it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (relative paths go under $DDN_OUTPUT_ROOT if set).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed; repeat for several replications.
    #[arg(long = "seed")]
    seeds: Vec<u64>,
    /// Maximum number of replications or trials run at once.
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Args)]
struct DatasetArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// Days of logged traffic.
    #[arg(long)]
    days: Option<i64>,
    #[arg(long)]
    min_impressions: Option<u64>,
    #[arg(long)]
    validation_fraction: Option<f64>,
}

/// Network hyperparameters settable from the command line.
#[derive(Args, Clone)]
struct NetworkArgs {
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    dropout: Option<f64>,
    /// Mixture components.
    #[arg(long)]
    components: Option<usize>,
    /// Hidden widths of both subnets, comma separated.
    #[arg(long, value_delimiter = ',')]
    hidden: Option<Vec<usize>>,
    #[arg(long)]
    mc_passes: Option<usize>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    kind: Option<LossKind>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[command(flatten)]
    network: NetworkArgs,
}

#[derive(Args)]
struct ReportArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Checkpoint to analyze; repeat for several.
    #[arg(long = "checkpoint")]
    checkpoints: Vec<PathBuf>,
    /// Scenario holding the never-shown group (defaults to the dataset's copy).
    #[arg(long)]
    scenario: Option<PathBuf>,
    #[arg(long)]
    mc_passes: Option<usize>,
    /// Training epochs of the noise-pool comparison.
    #[arg(long)]
    epochs: Option<usize>,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    scenario: Option<PathBuf>,
    #[arg(long)]
    days: Option<i64>,
    /// Experiment arms, comma separated (REG, MDN, DDN, oracle, random, empirical).
    #[arg(long, value_delimiter = ',')]
    kinds: Option<Vec<String>>,
    /// UCB multipliers to sweep, comma separated.
    #[arg(long, value_delimiter = ',')]
    a_values: Option<Vec<f64>>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    a: Option<f64>,
    /// Uncertainties combined in the UCB bonus, comma separated (data, model, measurement).
    #[arg(long, value_delimiter = ',', value_parser = parse_sigma_source)]
    sigma_sources: Option<Vec<SigmaSource>>,
}

fn parse_sigma_source(s: &str) -> Result<SigmaSource, String> {
    match s.trim().to_ascii_lowercase().as_str() {
        "data" => Ok(SigmaSource::Data),
        "model" => Ok(SigmaSource::Model),
        "measurement" => Ok(SigmaSource::Measurement),
        other => Err(format!("unknown uncertainty source {other:?}")),
    }
}

#[derive(Args)]
struct SearchArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    kind: Option<LossKind>,
}

#[derive(Args)]
struct InspectArgs {
    #[command(flatten)]
    common: Common,
    checkpoint: PathBuf,
}

fn base_config(name: &str, common: &Common) -> Result<RunConfig, Error> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    cfg.command = name.to_string();
    if let Some(out) = &common.out {
        cfg.output_dir = out.clone();
    }
    if !common.seeds.is_empty() {
        cfg.seeds = common.seeds.clone();
    }
    if let Some(j) = common.jobs {
        cfg.jobs = j;
    }
    Ok(cfg)
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn apply_network(net: &mut ddn_core::network::NetworkConfig, args: &NetworkArgs) {
    set(&mut net.optimizer.learning_rate, args.lr);
    set(&mut net.dropout, args.dropout);
    set(&mut net.components, args.components);
    set(&mut net.mc_passes, args.mc_passes);
    if let Some(h) = &args.hidden {
        net.target_hidden = h.clone();
        net.context_hidden = h.clone();
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::GenScenario(common) => {
            let cfg = base_config("gen-scenario", &common)?;
            commands::gen_scenario(&cfg)
        }
        Command::BuildDataset(a) => {
            let mut cfg = base_config("build-dataset", &a.common)?;
            if a.scenario.is_some() {
                cfg.scenario = a.scenario;
            }
            set(&mut cfg.analysis.days, a.days);
            set(&mut cfg.analysis.min_impressions, a.min_impressions);
            set(&mut cfg.analysis.validation_fraction, a.validation_fraction);
            commands::build_dataset(&cfg)
        }
        Command::Train(a) => {
            let mut cfg = base_config("train", &a.common)?;
            if a.dataset.is_some() {
                cfg.dataset = a.dataset;
            }
            set(&mut cfg.train.kind, a.kind);
            set(&mut cfg.train.epochs, a.epochs);
            set(&mut cfg.train.batch_size, a.batch_size);
            apply_network(&mut cfg.train.network, &a.network);
            commands::train(&cfg)
        }
        Command::Report(a) => {
            let mut cfg = base_config("report", &a.common)?;
            if a.dataset.is_some() {
                cfg.dataset = a.dataset;
            }
            if !a.checkpoints.is_empty() {
                cfg.checkpoints = a.checkpoints;
            }
            if a.scenario.is_some() {
                cfg.scenario = a.scenario;
            }
            set(&mut cfg.analysis.mc_passes, a.mc_passes);
            set(&mut cfg.analysis.epochs, a.epochs);
            commands::report(&cfg)
        }
        Command::Simulate(a) => {
            let mut cfg = base_config("simulate", &a.common)?;
            if a.scenario.is_some() {
                cfg.scenario = a.scenario;
            }
            set(&mut cfg.simulate.experiment.days, a.days);
            set(&mut cfg.simulate.kinds, a.kinds);
            set(&mut cfg.simulate.a_values, a.a_values);
            set(&mut cfg.simulate.strategy.epsilon, a.epsilon);
            set(&mut cfg.simulate.strategy.a, a.a);
            set(&mut cfg.simulate.strategy.sigma_sources, a.sigma_sources);
            commands::simulate(&cfg)
        }
        Command::Search(a) => {
            let mut cfg = base_config("search", &a.common)?;
            if a.dataset.is_some() {
                cfg.dataset = a.dataset;
            }
            set(&mut cfg.search.trials, a.trials);
            set(&mut cfg.search.epochs, a.epochs);
            set(&mut cfg.search.kind, a.kind);
            commands::search(&cfg)
        }
        Command::InspectCheckpoint(a) => {
            let mut cfg = base_config("inspect-checkpoint", &a.common)?;
            cfg.checkpoints = vec![a.checkpoint];
            commands::inspect_checkpoint(&cfg, a.common.out.is_some())
        }
    }
}

/// 2: configuration or usage, 3: input data, 4: anything failing at run time.
fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 2,
        Error::Data(_) | Error::Serde(_) => 3,
        Error::Usage(_) | Error::Numeric(_) | Error::Io(_) => 4,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
