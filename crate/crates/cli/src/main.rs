//! Command-line front end for the calibration pipeline: one subcommand per
//! stage, a TOML configuration file, and flag overrides (flag beats file,
//! file beats default).

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};
use serde_json::json;

use llmcal::pipeline::{run_stage, PipelineConfig, Stage, StageSummary};

#[derive(Parser)]
#[command(name = "llmcal", version, about = "Confidence calibration pipeline for QA models")]
struct Cli {
    /// TOML configuration file; defaults apply when omitted.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Master seed, overriding the configuration file.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// Input corpus JSONL, overriding the configuration file.
    #[arg(long, global = true, value_name = "PATH")]
    corpus: Option<PathBuf>,
    /// Output corpus JSONL, overriding the configuration file.
    #[arg(long, global = true, value_name = "PATH")]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Collect model answers and self-rated confidence for every record.
    Generate,
    /// Mark each generated answer correct or incorrect against its gold answers.
    Grade,
    /// Attach a question embedding to every record.
    Embed,
    /// Group questions into topic clusters.
    Cluster,
    /// Assign each record the observed accuracy of its cluster as a target.
    Targets,
    /// Train the confidence model and write its checkpoint.
    Train,
    /// Fit the likelihood rescaling baseline on the validation split.
    Baselines,
    /// Score every available method and write the metric table CSV.
    Evaluate,
    /// Render reliability diagrams and the cluster-quality table.
    Report,
}

impl Command {
    fn stage(&self) -> Stage {
        match self {
            Command::Generate => Stage::Generate,
            Command::Grade => Stage::Grade,
            Command::Embed => Stage::Embed,
            Command::Cluster => Stage::Cluster,
            Command::Targets => Stage::Targets,
            Command::Train => Stage::Train,
            Command::Baselines => Stage::Baselines,
            Command::Evaluate => Stage::Evaluate,
            Command::Report => Stage::Report,
        }
    }
}

fn run(cli: Cli) -> llmcal::Result<StageSummary> {
    let mut config = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(corpus) = cli.corpus {
        config.paths.corpus = corpus;
    }
    if let Some(out) = cli.out {
        config.paths.out = Some(out);
    }
    run_stage(cli.command.stage(), &config)
}

fn fail(message: String, code: u8) -> ExitCode {
    eprintln!("{}", json!({ "error": message }));
    ExitCode::from(code)
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => return fail(e.to_string(), 2),
    };
    match run(cli) {
        Ok(summary) => {
            println!(
                "{}: {} records -> {}",
                summary.stage,
                summary.records,
                summary.corpus_out.display()
            );
            for artifact in &summary.artifacts {
                println!("{}: wrote {}", summary.stage, artifact.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => fail(e.to_string(), 1),
    }
}
