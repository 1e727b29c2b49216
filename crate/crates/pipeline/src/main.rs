use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use riskfusion::config::load_config;
use riskfusion::manifest::parse_manifest;
use riskfusion::stages::{Runner, Stage};
use riskfusion::synth::{generate_synthetic, write_corpus};
use riskfusion::{PipelineError, Result};

#[derive(Debug, Parser)]
#[command(name = "riskfusion", version, about = "Multimodal suicide-risk screening experiments")]
struct Cli {
    /// Experiment config (TOML).
    #[arg(long, global = true, default_value = "experiment.toml")]
    config: PathBuf,
    /// Stage to run when no subcommand is given.
    #[arg(long, global = true, value_parser = parse_stage_or_all)]
    stage: Option<Selection>,
    /// Rerun stages even when their inputs are unchanged.
    #[arg(long, global = true)]
    force: bool,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Debug, Clone, Copy)]
enum Selection {
    One(Stage),
    All,
}

fn parse_stage_or_all(s: &str) -> Result<Selection, String> {
    if s == "all" {
        Ok(Selection::All)
    } else {
        s.parse().map(Selection::One)
    }
}

#[derive(Debug, Subcommand)]
#[command(rename_all = "snake_case")]
enum Command {
    /// Validate the manifest and assign splits.
    Ingest,
    /// Transcribe every recording through the configured ASR provider.
    Transcribe,
    /// Extract bilingual risk features from ER and ED transcripts.
    Extract,
    /// Fine-tune the text classifiers.
    #[command(alias = "train-text")]
    TrainText,
    /// Fine-tune the speech classifiers.
    #[command(alias = "train-speech")]
    TrainSpeech,
    /// Export frozen representations from the fine-tuned encoders.
    #[command(alias = "export-repr")]
    ExportRepr,
    /// Train the fusion heads on frozen representations.
    #[command(alias = "train-fusion")]
    TrainFusion,
    /// Per-task logits and subject-level decisions.
    Predict,
    /// Accuracy and F1 per task and combined.
    Evaluate,
    /// Render the result tables.
    Report,
    /// Every stage in order.
    All,
    /// Write the synthetic corpus described by the config's [synthetic] section.
    Synth {
        /// Output directory; defaults to the directory of the configured manifest.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check the config and the dataset manifest without running anything.
    Validate,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli.config)?;
    let selection = match cli.command {
        Some(Command::Synth { out }) => {
            let spec = cfg.synthetic.clone().unwrap_or_default();
            let dir = out.unwrap_or_else(|| cfg.manifest_path().parent().map(PathBuf::from).unwrap_or_default());
            let corpus = generate_synthetic(&spec)?;
            write_corpus(&corpus, &dir)?;
            println!("wrote {} subjects to {}", corpus.manifest.subjects.len(), dir.display());
            return Ok(());
        }
        Some(Command::Validate) => {
            let m = parse_manifest(&cfg.manifest_path())?;
            println!(
                "config {} ok (hash {}); manifest: {} subjects, {} recordings, {} transcripts",
                cfg.experiment_id,
                cfg.hash(),
                m.subjects.len(),
                m.recordings.len(),
                m.transcripts.len()
            );
            return Ok(());
        }
        Some(Command::All) => Selection::All,
        Some(c) => Selection::One(stage_of(c)),
        None => cli.stage.ok_or_else(|| PipelineError::Config("give a subcommand or --stage".into()))?,
    };
    let runner = Runner::new(cfg)?.force(cli.force);
    let outcomes = match selection {
        Selection::All => runner.run_all()?,
        Selection::One(s) => vec![runner.run(s)?],
    };
    for o in outcomes {
        println!("{:<13} {:?}", o.stage.as_str(), o.status);
    }
    Ok(())
}

fn stage_of(c: Command) -> Stage {
    match c {
        Command::Ingest => Stage::Ingest,
        Command::Transcribe => Stage::Transcribe,
        Command::Extract => Stage::Extract,
        Command::TrainText => Stage::TrainText,
        Command::TrainSpeech => Stage::TrainSpeech,
        Command::ExportRepr => Stage::ExportRepr,
        Command::TrainFusion => Stage::TrainFusion,
        Command::Predict => Stage::Predict,
        Command::Evaluate => Stage::Evaluate,
        Command::Report => Stage::Report,
        Command::All | Command::Synth { .. } | Command::Validate => unreachable!("handled by the caller"),
    }
}
