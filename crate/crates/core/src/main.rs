use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;

use rmna::config::Scorer;
use rmna::evaluator::RankMode;
use rmna::pipeline::{resolve_config, Context, Stage};

/// Knowledge graph completion with rule-mined neighbor aggregation.
#[derive(Parser)]
#[command(name = "rmna", version)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Pipeline config file (`key = value` lines).
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. `--set seed=7`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true, value_parser = parse_override)]
    overrides: Vec<(String, String)>,
    /// Dataset directory with train.txt, valid.txt and test.txt.
    #[arg(long, global = true)]
    data: Option<PathBuf>,
    /// Output directory for artifacts.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Mine path rules from the training graph.
    Mine,
    /// Keep rules above the head-coverage and confidence thresholds.
    Filter,
    /// Pretrain translational base embeddings.
    Pretrain,
    /// Turn multi-hop neighbors into transformed one-hop neighbors.
    Match,
    /// Train the neighbor aggregator.
    TrainAgg,
    /// Train the convolutional decoder.
    TrainDec,
    /// Rank the test split.
    Eval {
        #[arg(long)]
        mode: Option<RankMode>,
        #[arg(long)]
        scorer: Option<Scorer>,
    },
    /// Run every stage in order.
    Pipeline,
}

fn parse_override(s: &str) -> Result<(String, String), String> {
    let (k, v) = s.split_once('=').ok_or_else(|| format!("expected KEY=VALUE, found '{s}'"))?;
    Ok((k.trim().to_owned(), v.trim().to_owned()))
}

fn run(cli: Cli) -> rmna::Result<()> {
    let mut overrides = cli.common.overrides;
    if let Some(d) = cli.common.data {
        overrides.push(("data_dir".into(), d.display().to_string()));
    }
    if let Some(o) = cli.common.out {
        overrides.push(("out_dir".into(), o.display().to_string()));
    }
    let config = resolve_config(cli.common.config.as_deref(), &overrides)?;
    info!("seed {}", config.seed);
    info!("resolved config:\n{}", config.render());
    let ctx = Context::load(config)?;
    let stage = match cli.command {
        Command::Mine => Stage::Mine,
        Command::Filter => Stage::Filter,
        Command::Pretrain => Stage::Pretrain,
        Command::Match => Stage::Match,
        Command::TrainAgg => Stage::TrainAgg,
        Command::TrainDec => Stage::TrainDec,
        Command::Eval { mode, scorer } => {
            let report = ctx.evaluate(
                mode.unwrap_or(ctx.config.eval_mode),
                scorer.unwrap_or(ctx.config.scorer),
            )?;
            print!("{}", report.to_table());
            return Ok(());
        }
        Command::Pipeline => {
            print!("{}", ctx.run_all()?.to_table());
            return Ok(());
        }
    };
    ctx.run(stage)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("RMNA_LOG", "info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
