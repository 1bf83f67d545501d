mod artifacts;
mod commands;
mod error;

use clap::{Parser, Subcommand, ValueEnum};
use error::{error_json, error_kind, CliError};
use pcgkit::screen::{Fusion, TrainMode};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "pcgkit", version, about = "Heart sound quality gating and screening pipelines")]
struct Cli {
    /// Worker threads for internal parallelism.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum InitArg {
    Random,
    Checkpoint,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Frozen,
    Finetune,
}

#[derive(Clone, Copy, ValueEnum)]
enum FusionArg {
    #[value(name = "audio")]
    Audio,
    #[value(name = "audio+demo")]
    AudioDemo,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic labelled corpus.
    Synth {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: u64,
        /// Optional run config; its `io.synth` section drives the generator.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Train the quality model on an annotated manifest and report on the held-out split.
    QualityTrain {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a manifest with a quality model and split it into kept and removed rows.
    QualityGate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Self-supervised encoder pretraining.
    Pretrain {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum, default_value = "random")]
        init: InitArg,
        /// Encoder, pretraining or screening checkpoint used with `--init checkpoint`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a screening model on top of a pretrained encoder.
    Train {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        encoder: PathBuf,
        #[arg(long, value_enum)]
        mode: ModeArg,
        #[arg(long, value_enum)]
        fusion: FusionArg,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides the config seed; required when no config is given.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Score a labelled manifest with a screening model and report metrics and cost.
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        cost_config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    if cli.threads == 0 {
        return Err(CliError::Usage("--threads must be at least 1".into()));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads)
        .build_global()
        .map_err(|e| CliError::Usage(e.to_string()))?;
    match cli.command {
        Command::Synth { n, out, seed, config } => commands::synth(n, &out, seed, config.as_deref()),
        Command::QualityTrain { manifest, config, out } => commands::quality_train(&manifest, &config, &out),
        Command::QualityGate { model, manifest, out } => commands::quality_gate(&model, &manifest, &out),
        Command::Pretrain {
            manifest,
            config,
            init,
            checkpoint,
            out,
        } => {
            let init = match (init, checkpoint) {
                (InitArg::Random, None) => None,
                (InitArg::Checkpoint, Some(p)) => Some(p),
                (InitArg::Random, Some(_)) => return Err(CliError::Usage("--checkpoint needs --init checkpoint".into())),
                (InitArg::Checkpoint, None) => return Err(CliError::Usage("--init checkpoint needs --checkpoint".into())),
            };
            commands::pretrain_cmd(&manifest, &config, init.as_deref(), &out)
        }
        Command::Train {
            manifest,
            encoder,
            mode,
            fusion,
            out,
            config,
            seed,
        } => commands::train(commands::TrainArgs {
            manifest: &manifest,
            encoder: &encoder,
            mode: match mode {
                ModeArg::Frozen => TrainMode::Frozen,
                ModeArg::Finetune => TrainMode::Finetune,
            },
            fusion: match fusion {
                FusionArg::Audio => Fusion::Audio,
                FusionArg::AudioDemo => Fusion::AudioDemo,
            },
            out: &out,
            config: config.as_deref(),
            seed,
        }),
        Command::Evaluate {
            model,
            manifest,
            cost_config,
            out,
        } => commands::evaluate(&model, &manifest, cost_config.as_deref(), &out),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            eprintln!("{}", error_json("Usage", e.to_string().trim()));
            return ExitCode::from(2);
        }
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", error_json(&error_kind(&e), &e.to_string()));
            ExitCode::FAILURE
        }
    }
}
