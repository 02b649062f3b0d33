//! Subcommand implementations behind the `keyecho` binary. Each function
//! takes parsed arguments, does the file work, prints a short summary to
//! stdout, and maps every failure into [`CliError`] (exit code 1 at the
//! binary boundary).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio::{load_wav, to_mono, AudioError};
use crate::config::{ConfigError, PipelineConfig};
use crate::features::{build_dataset_with, spectrogram_png, FeatureError};
use crate::isolation::{
    calibrate_prominence, energy_envelope, isolate_adaptive, isolate_fixed, trace_csv,
    IsolationError, IsolationParams, Segment, TraceStep, FRAME_HOP, FRAME_LEN,
};
use crate::keys::{KeyClass, N_KEYS};
use crate::metrics::{
    classification_report, near_miss_profile, report_text, top_k_accuracy, ConfusionMatrix,
    KeyboardLayout, MetricsError,
};
use crate::nn::{load_checkpoint, save_checkpoint, CheckpointError, Classifier, Mode, ModelConfig};
use crate::store::{load_segments, save_segments, save_spectrograms, StoreError};
use crate::synth::{build_corpus, CorpusManifest, SynthError};
use crate::training::{
    evaluate, history_csv, split_dataset, train, Split, SplitSpec, TrainData, TrainError,
};

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Audio(#[from] AudioError),
    #[error(transparent)]
    Isolation(#[from] IsolationError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Tensor(#[from] crate::tensor::TensorError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("{0}")]
    Usage(String),
}

/// Generate the synthetic corpus into `out_dir`.
pub fn cmd_synth(config: &PipelineConfig, out_dir: &Path) -> Result<(), CliError> {
    let manifest = build_corpus(&config.corpus, out_dir)?;
    let presses: usize = manifest.files.iter().map(|f| f.onsets.len()).sum();
    println!(
        "wrote {} recordings ({presses} presses) and manifest to {}",
        manifest.files.len(),
        out_dir.display()
    );
    Ok(())
}

/// Isolation settings shared by the wav and manifest paths.
#[derive(Debug, Clone, Default)]
pub struct IsolateOpts {
    /// Use the adaptive threshold loop instead of one fixed threshold.
    pub adaptive: bool,
    /// Target press count for the adaptive loop (manifest entries default
    /// to their ground-truth press count).
    pub target: Option<usize>,
    /// Fixed-threshold prominence; also the adaptive starting point when
    /// `initial_prominence` is unset.
    pub prominence: Option<f64>,
    /// Adaptive starting prominence; auto-calibrated from the recording's
    /// own envelope when absent.
    pub initial_prominence: Option<f64>,
    /// Adaptive step; defaults to a tenth of the starting prominence.
    pub step: Option<f64>,
    pub max_iterations: Option<usize>,
    /// Write the adaptive search trace (`file,iteration,...`) here.
    pub trace: Option<PathBuf>,
}

fn isolate_one(
    clip: &crate::audio::AudioClip,
    opts: &IsolateOpts,
    target: Option<usize>,
) -> Result<(Vec<Segment>, Vec<TraceStep>), CliError> {
    let mono = to_mono(clip);
    if opts.adaptive {
        let target = target
            .or(opts.target)
            .ok_or_else(|| CliError::Usage("adaptive isolation needs --target".into()))?;
        let initial = match opts.initial_prominence.or(opts.prominence) {
            Some(p) => p,
            None => {
                let env = energy_envelope(&mono, FRAME_LEN, FRAME_HOP)?;
                calibrate_prominence(&env, target).ok_or_else(|| {
                    CliError::Usage(format!(
                        "cannot auto-calibrate: fewer than {target} peaks; pass --initial-prominence"
                    ))
                })?
            }
        };
        let mut params = IsolationParams::new(initial, opts.step.unwrap_or(initial / 10.0), target);
        if let Some(m) = opts.max_iterations {
            params.max_iterations = m;
        }
        let out = isolate_adaptive(&mono, &params)?;
        Ok((out.segments, out.trace))
    } else {
        let p = opts
            .prominence
            .ok_or_else(|| CliError::Usage("fixed isolation needs --prominence".into()))?;
        Ok((isolate_fixed(&mono, p)?, Vec::new()))
    }
}

fn write_traces(path: &Path, traces: &[(String, Vec<TraceStep>)]) -> Result<(), CliError> {
    let mut out = String::from("file,iteration,prominence,step,count\n");
    for (file, trace) in traces {
        for line in trace_csv(trace).lines().skip(1) {
            out.push_str(file);
            out.push(',');
            out.push_str(line);
            out.push('\n');
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Isolate one recording into a segments store.
pub fn cmd_isolate_wav(
    input: &Path,
    out: &Path,
    label: Option<KeyClass>,
    opts: &IsolateOpts,
    seed: Option<u64>,
) -> Result<(), CliError> {
    let clip = load_wav(input)?;
    let (mut segments, trace) = isolate_one(&clip, opts, None)?;
    if let Some(l) = label {
        for s in &mut segments {
            s.label = Some(l);
        }
    }
    if let Some(trace_path) = &opts.trace {
        write_traces(trace_path, &[(input.display().to_string(), trace)])?;
    }
    save_segments(out, &segments, seed)?;
    println!("isolated {} segments from {}", segments.len(), input.display());
    Ok(())
}

/// Isolate every recording of a corpus manifest into one labeled store.
pub fn cmd_isolate_manifest(
    manifest_path: &Path,
    out: &Path,
    opts: &IsolateOpts,
    seed: Option<u64>,
) -> Result<(), CliError> {
    let manifest: CorpusManifest = serde_json::from_slice(&std::fs::read(manifest_path)?)?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let mut all = Vec::new();
    let mut traces = Vec::new();
    for entry in &manifest.files {
        let clip = load_wav(base.join(&entry.path))?;
        let (mut segments, trace) = isolate_one(&clip, opts, Some(entry.onsets.len()))?;
        for s in &mut segments {
            s.label = Some(entry.class);
        }
        println!("{}: {} segments", entry.path, segments.len());
        traces.push((entry.path.clone(), trace));
        all.append(&mut segments);
    }
    if let Some(trace_path) = &opts.trace {
        write_traces(trace_path, &traces)?;
    }
    save_segments(out, &all, seed)?;
    println!("wrote {} segments to {}", all.len(), out.display());
    Ok(())
}

/// Featurize a segments store into a spectrogram store (optionally
/// augmented), with optional PNG export for inspection.
pub fn cmd_featurize(
    config: &PipelineConfig,
    segments_path: &Path,
    out: &Path,
    augment: bool,
    png_dir: Option<&Path>,
) -> Result<(), CliError> {
    let segments = load_segments(segments_path)?;
    let specs = build_dataset_with(
        &segments,
        &config.mel,
        &config.aug,
        config.corpus.sample_rate,
        config.run.seed,
        augment,
        config.normalize,
    )?;
    save_spectrograms(out, &specs, &config.mel, Some(config.run.seed))?;
    if let Some(dir) = png_dir {
        std::fs::create_dir_all(dir)?;
        for (i, spec) in specs.iter().enumerate() {
            let class = spec.label.map(|k| k.to_char()).unwrap_or('_');
            std::fs::write(dir.join(format!("{i:04}_{class}.png")), spectrogram_png(spec))?;
        }
    }
    println!("featurized {} spectrograms to {}", specs.len(), out.display());
    Ok(())
}

/// Split description written next to the checkpoints so evaluation uses the
/// same test items.
#[derive(Debug, Serialize, Deserialize)]
pub struct SplitsFile {
    pub split: Split,
    pub spec: SplitSpec,
}

fn class_count(labels: &[usize]) -> usize {
    labels.iter().max().map_or(2, |&m| (m + 1).max(2))
}

/// Train from a labeled segments store; writes `best.ckpt`, `final.ckpt`,
/// `history.csv`, and `splits.json` into `out_dir`.
pub fn cmd_train(
    config: &PipelineConfig,
    segments_path: &Path,
    out_dir: &Path,
) -> Result<(), CliError> {
    let segments = load_segments(segments_path)?;
    let labels: Vec<usize> = segments
        .iter()
        .map(|s| {
            s.label
                .map(|k| k.index())
                .ok_or_else(|| CliError::Usage("training needs a labeled segments store".into()))
        })
        .collect::<Result<_, _>>()?;

    let split = split_dataset(&labels, &config.split)?;
    let train_segments: Vec<Segment> = split.train.iter().map(|&i| segments[i].clone()).collect();
    let val_segments: Vec<Segment> = split.val.iter().map(|&i| segments[i].clone()).collect();
    let val_specs = build_dataset_with(
        &val_segments,
        &config.mel,
        &config.aug,
        config.corpus.sample_rate,
        config.run.seed,
        false,
        config.normalize,
    )?;

    let model_config = ModelConfig {
        n_classes: class_count(&labels),
        ..ModelConfig::default()
    };
    let mut model = Classifier::<f32>::init(&model_config, config.run.seed)?;
    let data = TrainData {
        train_segments,
        val_specs,
        mel: config.mel.clone(),
        aug: config.aug,
        sample_rate: config.corpus.sample_rate,
        standardize: config.normalize,
        augment: true,
    };
    let outcome = train(&mut model, &data, &config.run)?;

    std::fs::create_dir_all(out_dir)?;
    std::fs::write(out_dir.join("best.ckpt"), &outcome.best_checkpoint)?;
    save_checkpoint(&model, out_dir.join("final.ckpt"))?;
    std::fs::write(out_dir.join("history.csv"), history_csv(&outcome.history))?;
    std::fs::write(
        out_dir.join("splits.json"),
        serde_json::to_vec_pretty(&SplitsFile {
            split,
            spec: config.split.clone(),
        })?,
    )?;
    match outcome.best_epoch {
        Some(e) => println!(
            "peak validation accuracy {:.4} at epoch {e}; checkpoints in {}",
            outcome.history.peak_val_accuracy,
            out_dir.display()
        ),
        None => println!("no validation epochs ran; final weights saved"),
    }
    Ok(())
}

/// Prediction dump consumed by `report`.
#[derive(Debug, Serialize, Deserialize)]
pub struct PredictionsFile {
    pub n_classes: usize,
    pub true_labels: Vec<usize>,
    pub rankings: Vec<Vec<usize>>,
}

/// Evaluate a checkpoint on one split subset of a segments store.
pub fn cmd_eval(
    config: &PipelineConfig,
    ckpt: &Path,
    segments_path: &Path,
    splits_path: &Path,
    subset: &str,
    out: &Path,
) -> Result<(), CliError> {
    let model = load_checkpoint::<f32>(ckpt)?;
    let segments = load_segments(segments_path)?;
    let splits: SplitsFile = serde_json::from_slice(&std::fs::read(splits_path)?)?;
    let indices: Vec<usize> = match subset {
        "train" => splits.split.train.clone(),
        "val" => splits.split.val.clone(),
        "test" => splits.split.test.clone(),
        "all" => (0..segments.len()).collect(),
        other => {
            return Err(CliError::Usage(format!(
                "subset must be train|val|test|all, got `{other}`"
            )))
        }
    };
    let subset_segments: Vec<Segment> = indices
        .iter()
        .map(|&i| {
            segments.get(i).cloned().ok_or_else(|| {
                CliError::Usage(format!("split index {i} outside store of {}", segments.len()))
            })
        })
        .collect::<Result<_, _>>()?;
    let specs = build_dataset_with(
        &subset_segments,
        &config.mel,
        &config.aug,
        config.corpus.sample_rate,
        config.run.seed,
        false,
        config.normalize,
    )?;
    let eval = evaluate(&model, &specs, config.run.batch_size)?;

    let preds = PredictionsFile {
        n_classes: model.config.n_classes,
        true_labels: eval.true_labels,
        rankings: eval.rankings,
    };
    std::fs::write(out, serde_json::to_vec_pretty(&preds)?)?;
    let correct = preds
        .rankings
        .iter()
        .zip(&preds.true_labels)
        .filter(|(r, &t)| r[0] == t)
        .count();
    println!(
        "{subset} accuracy {:.4} ({correct}/{} correct) -> {}",
        correct as f64 / preds.true_labels.len() as f64,
        preds.true_labels.len(),
        out.display()
    );
    Ok(())
}

/// Render metrics from a predictions file: aligned classification report,
/// top-5 accuracy, keyboard near-miss profile, confusion CSV and PNG.
pub fn cmd_report(predictions_path: &Path, out_dir: &Path) -> Result<(), CliError> {
    let preds: PredictionsFile = serde_json::from_slice(&std::fs::read(predictions_path)?)?;
    let top1: Vec<usize> = preds.rankings.iter().map(|r| r[0]).collect();
    let cm = ConfusionMatrix::from_pairs(&preds.true_labels, &top1, preds.n_classes)?;
    let report = classification_report(&cm)?;

    let mut text = report_text(&report);
    let k5 = 5.min(preds.n_classes);
    let top5 = top_k_accuracy(&preds.rankings, &preds.true_labels, k5)?;
    text.push_str(&format!("\nTop-{k5} Accuracy: {top5:.4}\n"));
    if preds.n_classes == N_KEYS {
        let profile = near_miss_profile(&cm, &KeyboardLayout::qwerty());
        text.push_str(&format!(
            "\nNear-miss profile ({} errors):\n  within 1 key: {:.4}\n  within 2 keys: {:.4}\n",
            profile.total_errors, profile.fraction_within_one, profile.fraction_within_two
        ));
        for (dist, count) in &profile.histogram {
            text.push_str(&format!("  distance {dist:>4.1}: {count}\n"));
        }
    }

    std::fs::create_dir_all(out_dir)?;
    std::fs::write(out_dir.join("report.txt"), &text)?;
    std::fs::write(out_dir.join("confusion.csv"), cm.to_csv())?;
    std::fs::write(out_dir.join("confusion.png"), cm.to_png())?;
    println!(
        "accuracy {:.4}, macro F1 {:.4}, weighted F1 {:.4}; report in {}",
        report.accuracy,
        report.macro_avg.f1,
        report.weighted_avg.f1,
        out_dir.display()
    );
    Ok(())
}

/// Eval-mode model handle for FFI and tests.
pub fn load_model(ckpt: &Path) -> Result<Classifier<f32>, CliError> {
    let mut model = load_checkpoint::<f32>(ckpt)?;
    model.set_mode(Mode::Eval);
    Ok(model)
}
