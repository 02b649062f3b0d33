//! keyecho: synthesize, isolate, featurize, train, evaluate, report.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use keyecho::cli::{self, CliError, IsolateOpts};
use keyecho::config::{PipelineConfig, CONFIG_KEYS_HELP};
use keyecho::keys::KeyClass;

#[derive(Parser)]
#[command(
    name = "keyecho",
    version,
    about = "Acoustic keystroke side-channel pipeline on synthetic audio",
    propagate_version = true
)]
struct Cli {
    /// Override the config file's Seed for every random stream.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Print the effective configuration before running.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArg {
    /// Pipeline configuration file (flat `Key = Value`); defaults apply
    /// when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic keystroke corpus (WAV per key + manifest).
    #[command(after_help = CONFIG_KEYS_HELP)]
    Synth {
        #[command(flatten)]
        config: ConfigArg,
        /// Output directory for recordings and manifest.json.
        #[arg(long)]
        out: PathBuf,
    },
    /// Cut recordings into fixed-length keystroke segments.
    #[command(after_help = CONFIG_KEYS_HELP)]
    Isolate {
        #[command(flatten)]
        config: ConfigArg,
        /// Corpus manifest; isolates every recording, labeled by class.
        #[arg(long, conflicts_with = "input")]
        manifest: Option<PathBuf>,
        /// Single WAV recording.
        #[arg(long = "in")]
        input: Option<PathBuf>,
        /// Label for all segments of a single recording (single character).
        #[arg(long, value_parser = parse_key)]
        label: Option<KeyClass>,
        /// Segments store to write (raw f32 + JSON sidecar).
        #[arg(long)]
        out: PathBuf,
        /// Use the adaptive threshold loop.
        #[arg(long)]
        adaptive: bool,
        /// Target keystroke count for the adaptive loop.
        #[arg(long)]
        target: Option<usize>,
        /// Fixed prominence threshold (or the adaptive starting point).
        #[arg(long)]
        prominence: Option<f64>,
        /// Adaptive starting prominence (auto-calibrated when omitted).
        #[arg(long)]
        initial_prominence: Option<f64>,
        /// Adaptive step size (default: a tenth of the start).
        #[arg(long)]
        step: Option<f64>,
        /// Iteration cap for the adaptive loop.
        #[arg(long)]
        max_iterations: Option<usize>,
        /// Write the adaptive search trace as CSV.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Convert a segments store into normalized log-mel spectrograms.
    #[command(after_help = CONFIG_KEYS_HELP)]
    Featurize {
        #[command(flatten)]
        config: ConfigArg,
        /// Input segments store.
        #[arg(long = "in")]
        input: PathBuf,
        /// Spectrogram store to write.
        #[arg(long)]
        out: PathBuf,
        /// Apply training-time augmentation (time shift + masking).
        #[arg(long)]
        augment: bool,
        /// Also export one grayscale PNG per spectrogram.
        #[arg(long)]
        png_dir: Option<PathBuf>,
    },
    /// Train the classifier from a labeled segments store.
    #[command(after_help = CONFIG_KEYS_HELP)]
    Train {
        #[command(flatten)]
        config: ConfigArg,
        /// Labeled segments store.
        #[arg(long)]
        segments: PathBuf,
        /// Output directory (best.ckpt, final.ckpt, history.csv, splits.json).
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Evaluate a checkpoint on a stored split subset.
    #[command(after_help = CONFIG_KEYS_HELP)]
    Eval {
        #[command(flatten)]
        config: ConfigArg,
        /// Model checkpoint (best.ckpt or final.ckpt).
        #[arg(long)]
        ckpt: PathBuf,
        /// Labeled segments store the split indexes into.
        #[arg(long)]
        segments: PathBuf,
        /// splits.json produced by `train`.
        #[arg(long)]
        splits: PathBuf,
        /// Which subset to score: train, val, test, or all.
        #[arg(long, default_value = "test")]
        subset: String,
        /// Predictions JSON to write.
        #[arg(long)]
        out: PathBuf,
    },
    /// Render metrics (report, confusion CSV/PNG) from predictions.
    #[command(after_help = CONFIG_KEYS_HELP)]
    Report {
        /// Predictions JSON from `eval`.
        #[arg(long)]
        predictions: PathBuf,
        /// Output directory for report.txt, confusion.csv, confusion.png.
        #[arg(long)]
        out_dir: PathBuf,
    },
}

fn parse_key(s: &str) -> Result<KeyClass, String> {
    let mut chars = s.chars();
    match (chars.next(), chars.next()) {
        (Some(c), None) => {
            KeyClass::from_char(c).ok_or_else(|| format!("`{c}` is not one of 0-9a-z"))
        }
        _ => Err("expected a single character 0-9a-z".into()),
    }
}

fn load_config(arg: &ConfigArg, seed: Option<u64>, verbose: u8) -> Result<PipelineConfig, CliError> {
    let mut config = match &arg.config {
        Some(path) => PipelineConfig::from_file(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = seed {
        config.propagate_seed(seed);
    }
    if verbose > 0 {
        eprint!("{}", config.to_text());
    }
    Ok(config)
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Synth { config, out } => {
            let config = load_config(&config, cli.seed, cli.verbose)?;
            cli::cmd_synth(&config, &out)
        }
        Command::Isolate {
            config,
            manifest,
            input,
            label,
            out,
            adaptive,
            target,
            prominence,
            initial_prominence,
            step,
            max_iterations,
            trace,
        } => {
            let config = load_config(&config, cli.seed, cli.verbose)?;
            let opts = IsolateOpts {
                adaptive,
                target,
                prominence,
                initial_prominence,
                step,
                max_iterations,
                trace,
            };
            match (manifest, input) {
                (Some(m), None) => {
                    cli::cmd_isolate_manifest(&m, &out, &opts, Some(config.run.seed))
                }
                (None, Some(w)) => {
                    cli::cmd_isolate_wav(&w, &out, label, &opts, Some(config.run.seed))
                }
                _ => Err(CliError::Usage(
                    "pass exactly one of --manifest or --in".into(),
                )),
            }
        }
        Command::Featurize {
            config,
            input,
            out,
            augment,
            png_dir,
        } => {
            let config = load_config(&config, cli.seed, cli.verbose)?;
            cli::cmd_featurize(&config, &input, &out, augment, png_dir.as_deref())
        }
        Command::Train {
            config,
            segments,
            out_dir,
        } => {
            let config = load_config(&config, cli.seed, cli.verbose)?;
            cli::cmd_train(&config, &segments, &out_dir)
        }
        Command::Eval {
            config,
            ckpt,
            segments,
            splits,
            subset,
            out,
        } => {
            let config = load_config(&config, cli.seed, cli.verbose)?;
            cli::cmd_eval(&config, &ckpt, &segments, &splits, &subset, &out)
        }
        Command::Report {
            predictions,
            out_dir,
        } => cli::cmd_report(&predictions, &out_dir),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse(); // usage errors exit 2 via clap
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
