mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::KEYS_HELP;

#[derive(Parser)]
#[command(
    name = "specwav",
    version,
    about = "Spectrogram-resizing attack pipeline for anonymized speech"
)]
struct Cli {
    /// Worker threads for internal pools (0 = all cores). Results do not depend on it.
    #[arg(long, global = true, env = "SPECWAV_JOBS", default_value_t = 0)]
    jobs: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArg {
    /// Run config (TOML)
    #[arg(short, long)]
    config: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// SR-augment the training manifest into <run>/augmented
    #[command(after_help = KEYS_HELP)]
    Augment(ConfigArg),
    /// Extract fbank features, or validate external features
    #[command(after_help = KEYS_HELP)]
    Features(ConfigArg),
    /// Two-stage incremental training (or a single stage)
    #[command(after_help = KEYS_HELP)]
    Train {
        #[command(flatten)]
        config: ConfigArg,
        /// Run only this stage; stage 2 resumes from <run>/checkpoints/stage1.spwc
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
        stage: Option<u8>,
    },
    /// Embed, score trials, compute EERs and write the report
    #[command(after_help = KEYS_HELP)]
    Eval(ConfigArg),
    /// Merge EER report CSVs, or compare two of them (first minus second)
    Report {
        #[arg(required = true)]
        reports: Vec<PathBuf>,
        #[arg(long)]
        compare: bool,
        /// Write the merged report or delta table as CSV here
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Write the synthetic speaker corpus and a starter run.toml
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 8)]
        speakers: usize,
        /// Held-out evaluation speakers (0 = held-out utterances of the training speakers)
        #[arg(long, default_value_t = 0)]
        eval_speakers: usize,
        /// Upward mel shift of the toy anonymization, in 80-bin mel bins
        #[arg(long, default_value_t = 4)]
        shift: usize,
        #[arg(long, default_value_t = 2025)]
        seed: u64,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let jobs = cli.jobs;
    let (name, result) = match cli.command {
        Command::Augment(c) => ("augment", commands::augment(&c.config, jobs)),
        Command::Features(c) => ("features", commands::features(&c.config, jobs)),
        Command::Train { config, stage } => ("train", commands::train(&config.config, stage, jobs)),
        Command::Eval(c) => ("eval", commands::eval(&c.config, jobs)),
        Command::Report {
            reports,
            compare,
            out,
        } => (
            "report",
            commands::report(&reports, compare, out.as_deref()),
        ),
        Command::Synth {
            out,
            speakers,
            eval_speakers,
            shift,
            seed,
        } => (
            "synth",
            commands::synth(&out, speakers, eval_speakers, shift, seed),
        ),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let line = serde_json::json!({
                "status": "error",
                "command": name,
                "error": format!("{e:#}"),
            });
            eprintln!("{line}");
            ExitCode::FAILURE
        }
    }
}
