//! `hyperseed`: synthesize datacubes, extract features, train and evaluate SVMs
//! and CNNs, ensemble checkpoints, render saliency maps and collect reports.
//!
//! Exit codes: 0 success, 2 usage or configuration error, 3 data error,
//! 4 numerical failure.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{CnnArgs, Ctx, SynthArgs};
use config::RunConfig;

#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

/// One log line: `[stage] message key=value ...` on stderr.
pub fn log(stage: &str, message: &str, kv: &[(&str, String)]) {
    let tail: Vec<String> = kv
        .iter()
        .map(|(k, v)| if v.contains(char::is_whitespace) { format!("{k}={v:?}") } else { format!("{k}={v}") })
        .collect();
    eprintln!("[{stage}] {message} {}", tail.join(" "));
}

#[derive(Parser)]
#[command(name = "hyperseed", version, about = "Hyperspectral seed classification experiments")]
struct Cli {
    /// TOML run configuration; flags take precedence over its keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory [default: config `out_dir`, then $HYPERSEED_OUT, then ./hyperseed-out].
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Master seed [default: config `seed`, then 0].
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic benchmark dataset (cubes + manifest.tsv) into the output directory.
    Synth {
        /// spectral-only, spatial-only, mixed-4class or easy-6class.
        #[arg(long)]
        kind: Option<String>,
        #[arg(long)]
        per_class: Option<usize>,
        /// desk (16x48x24) or paper (50x170x110).
        #[arg(long)]
        size: Option<String>,
    },
    /// Write a standardisable feature table for every cube in a manifest.
    Features {
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// spatial, spectral or spatio-spectral.
        #[arg(long)]
        mode: Option<String>,
    },
    /// Hold out a test split, cross-validate, fit an RBF SVM and evaluate it.
    TrainSvm {
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        mode: Option<String>,
    },
    /// Split 65/20/15, augment, train a CNN and evaluate it on the test split.
    TrainCnn {
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// vgg, resnet or resnet-b.
        #[arg(long)]
        family: Option<String>,
        #[arg(long)]
        epochs: Option<usize>,
        /// desk or reference.
        #[arg(long)]
        preset: Option<String>,
    },
    /// Repeat split/train/test over consecutive seeds and report mean and std.
    Eval {
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// cnn or svm.
        #[arg(long)]
        model: Option<String>,
        #[arg(long)]
        repetitions: Option<usize>,
        #[arg(long)]
        family: Option<String>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        preset: Option<String>,
        /// Feature mode for `--model svm`.
        #[arg(long)]
        mode: Option<String>,
    },
    /// Average the softmax outputs of several checkpoints on the test split.
    Ensemble {
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Repeat for each member.
        #[arg(long = "checkpoint")]
        checkpoints: Vec<PathBuf>,
    },
    /// Write gradient saliency maps (PGM + CSV) for selected cubes.
    Saliency {
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Manifest row indices [default: 0].
        #[arg(long = "cube")]
        cubes: Vec<usize>,
        /// Class whose score is differentiated [default: predicted class].
        #[arg(long)]
        target: Option<usize>,
    },
    /// Collect every report in the output directory into report.md.
    Report,
}

impl Command {
    fn stage(&self) -> &'static str {
        match self {
            Command::Synth { .. } => "synth",
            Command::Features { .. } => "features",
            Command::TrainSvm { .. } => "train-svm",
            Command::TrainCnn { .. } => "train-cnn",
            Command::Eval { .. } => "eval",
            Command::Ensemble { .. } => "ensemble",
            Command::Saliency { .. } => "saliency",
            Command::Report => "report",
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let cfg = RunConfig::load(cli.config.as_deref())?;
    let ctx = Ctx {
        out: cfg.out_dir(cli.out.as_deref()),
        seed: cli.seed.or(cfg.seed).unwrap_or(0),
        cfg,
    };
    match cli.command {
        Command::Synth { kind, per_class, size } => commands::synth(&ctx, SynthArgs { kind, per_class, size }),
        Command::Features { manifest, mode } => commands::features(&ctx, manifest, mode),
        Command::TrainSvm { manifest, mode } => commands::train_svm(&ctx, manifest, mode),
        Command::TrainCnn { manifest, family, epochs, preset } => {
            commands::train_cnn(&ctx, manifest, CnnArgs { family, epochs, preset })
        }
        Command::Eval { manifest, model, repetitions, family, epochs, preset, mode } => {
            commands::eval(&ctx, manifest, model, repetitions, CnnArgs { family, epochs, preset }, mode)
        }
        Command::Ensemble { manifest, checkpoints } => commands::ensemble(&ctx, manifest, checkpoints),
        Command::Saliency { manifest, checkpoint, cubes, target } => {
            commands::saliency(&ctx, manifest, checkpoint, cubes, target)
        }
        Command::Report => commands::report(&ctx),
    }
}

/// Exit code and failure family for an error chain.
fn classify(err: &anyhow::Error) -> (u8, &'static str) {
    for cause in err.chain() {
        if cause.downcast_ref::<UsageError>().is_some() {
            return (2, "usage");
        }
        if let Some(e) = cause.downcast_ref::<hyperseed::Error>() {
            let code = match e {
                hyperseed::Error::Config(_) | hyperseed::Error::InvalidArgument(_) => 2,
                hyperseed::Error::Numerical(_) => 4,
                _ => 3,
            };
            return (code, e.kind());
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return (3, "io");
        }
    }
    (3, "data")
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let stage = cli.command.stage();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let (code, kind) = classify(&err);
            log(stage, "failed", &[("kind", kind.to_string()), ("error", format!("{err:#}"))]);
            ExitCode::from(code)
        }
    }
}
