use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use tal::{Error, Pipeline, PipelineConfig, Stage};

#[derive(Parser)]
#[command(name = "tal", version, about = "Temporal action localization pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML configuration; defaults apply to missing fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Artifact directory.
    #[arg(long, global = true, default_value = "workspace")]
    workspace: PathBuf,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Consume artifacts even if they were built from another configuration.
    #[arg(long, global = true)]
    force: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Generate (or import) the train and test datasets.
    Synth(Common),
    /// Train the probability model.
    TrainProb(Common),
    /// Generate proposals for both splits.
    Propose(Common),
    /// Train the configured ranker.
    TrainRank(Common),
    /// Score test proposals and apply NMS.
    Rank(Common),
    /// Evaluate ranked proposals.
    Eval(Common),
    /// Compare every evaluated run in the workspace.
    Report(Common),
    /// Run one stage, or `all` of them in order.
    Run {
        stage: String,
        #[command(flatten)]
        common: Common,
    },
}

fn execute(cli: Cli) -> Result<(), Error> {
    let (stage, common) = match cli.command {
        Command::Synth(c) => (Some(Stage::Synth), c),
        Command::TrainProb(c) => (Some(Stage::TrainProb), c),
        Command::Propose(c) => (Some(Stage::Propose), c),
        Command::TrainRank(c) => (Some(Stage::TrainRank), c),
        Command::Rank(c) => (Some(Stage::Rank), c),
        Command::Eval(c) => (Some(Stage::Eval), c),
        Command::Report(c) => (Some(Stage::Report), c),
        Command::Run { stage, common } if stage == "all" => (None, common),
        Command::Run { stage, common } => (Some(stage.parse().map_err(Error::Config)?), common),
    };
    let mut cfg = match &common.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    let mut pipeline = Pipeline::new(cfg, &common.workspace, common.force)?;
    match stage {
        Some(s) => pipeline.run(s),
        None => pipeline.run_all(),
    }
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
