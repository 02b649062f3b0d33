//! Dataset splitting, the Adam + linear-annealing training loop with
//! validation every few epochs, and test-set evaluation.
//!
//! Training re-augments its items every epoch (time shift on the raw
//! segment, band masking on the spectrogram); validation and test data are
//! featurized once without augmentation. The whole loop is a pure function
//! of (seed, config, data): per-epoch shuffles and per-item augmentation
//! draw from streams keyed by the run seed, the epoch, and the item index.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{
    mel_spectrogram, normalize, spec_mask, time_shift, AugmentConfig, MelConfig, Spectrogram,
};
use crate::isolation::Segment;
use crate::nn::{checkpoint_bytes, rank_logits, Classifier, Mode};
use crate::tensor::{Scalar, Tensor, TensorError};
use crate::util::rng_for;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("stratified split impossible: {0}")]
    Stratify(String),
    #[error("bad dataset: {0}")]
    Data(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Feature(#[from] crate::features::FeatureError),
}

/// How the dataset is divided into train/validation/test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitMode {
    Random,
    Stratified,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub mode: SplitMode,
    pub train_fraction: f64,
    pub val_fraction: f64,
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            mode: SplitMode::Random,
            train_fraction: 0.7,
            val_fraction: 0.1,
            test_fraction: 0.2,
            seed: 0,
        }
    }
}

impl SplitSpec {
    fn validate(&self) -> Result<(), TrainError> {
        let fs = [self.train_fraction, self.val_fraction, self.test_fraction];
        if fs.iter().any(|f| *f <= 0.0 || *f >= 1.0) {
            return Err(TrainError::Config(format!(
                "split fractions must lie in (0,1): {fs:?}"
            )));
        }
        if (fs.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(TrainError::Config(format!(
                "split fractions must sum to 1: {fs:?}"
            )));
        }
        Ok(())
    }
}

/// Disjoint, exhaustive index sets into the original dataset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Partition `labels` into train/val/test index lists.
///
/// Random mode shuffles all indices with the split seed and cuts at
/// `floor(fraction * n)` boundaries (remainder to test). Stratified mode
/// shuffles within each class and allocates `floor(fraction * class_count)`
/// items to test and validation, remainders to train; every class in
/// `[0, max_label]` must be populated.
pub fn split_dataset(labels: &[usize], spec: &SplitSpec) -> Result<Split, TrainError> {
    spec.validate()?;
    let n = labels.len();
    if n == 0 {
        return Err(TrainError::Data("empty dataset".into()));
    }

    match spec.mode {
        SplitMode::Random => {
            let mut idx: Vec<usize> = (0..n).collect();
            idx.shuffle(&mut rng_for(&[spec.seed, 0x73706c6974])); // "split"
            let n_train = (spec.train_fraction * n as f64).floor() as usize;
            let n_val = (spec.val_fraction * n as f64).floor() as usize;
            let train = idx[..n_train].to_vec();
            let val = idx[n_train..n_train + n_val].to_vec();
            let test = idx[n_train + n_val..].to_vec();
            Ok(Split { train, val, test })
        }
        SplitMode::Stratified => {
            let max_label = *labels.iter().max().unwrap();
            let mut per_class: Vec<Vec<usize>> = vec![Vec::new(); max_label + 1];
            for (i, &l) in labels.iter().enumerate() {
                per_class[l].push(i);
            }
            let mut split = Split {
                train: Vec::new(),
                val: Vec::new(),
                test: Vec::new(),
            };
            for (class, mut members) in per_class.into_iter().enumerate() {
                if members.is_empty() {
                    return Err(TrainError::Stratify(format!(
                        "class {class} has no items"
                    )));
                }
                members.shuffle(&mut rng_for(&[spec.seed, 0x73747261, class as u64]));
                let k = members.len();
                let n_test = (spec.test_fraction * k as f64).floor() as usize;
                let n_val = (spec.val_fraction * k as f64).floor() as usize;
                split.test.extend(&members[..n_test]);
                split.val.extend(&members[n_test..n_test + n_val]);
                split.train.extend(&members[n_test + n_val..]);
            }
            Ok(split)
        }
    }
}

/// Run hyperparameters (the flat-file config mirrors these).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub max_lr: f64,
    pub betas: (f64, f64),
    pub eps: f64,
    pub validate_every: usize,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            epochs: 1100,
            batch_size: 16,
            max_lr: 5e-4,
            betas: (0.9, 0.999),
            eps: 1e-8,
            validate_every: 5,
            seed: 0,
        }
    }
}

impl RunConfig {
    fn validate(&self) -> Result<(), TrainError> {
        if self.epochs < 1 || self.batch_size < 1 || self.validate_every < 1 {
            return Err(TrainError::Config(
                "epochs, batch size and validation cadence must be >= 1".into(),
            ));
        }
        if self.max_lr <= 0.0 {
            return Err(TrainError::Config("max learning rate must be positive".into()));
        }
        Ok(())
    }
}

/// Linearly annealed learning rate: `max_lr * (1 - epoch/epochs)`.
pub fn lr_at(epoch: usize, cfg: &RunConfig) -> f64 {
    debug_assert!(epoch < cfg.epochs);
    cfg.max_lr * (1.0 - epoch as f64 / cfg.epochs as f64)
}

/// First/second moment buffers for Adam, one pair per parameter tensor.
pub struct AdamState<T: Scalar> {
    pub step: u64,
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new() -> Self {
        AdamState {
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }
}

impl<T: Scalar> Default for AdamState<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// One Adam update on a single parameter vector. `t` is the 1-based step
/// count used for bias correction.
#[allow(clippy::too_many_arguments)]
pub fn adam_update<T: Scalar>(
    param: &mut [T],
    grad: &[T],
    m: &mut [T],
    v: &mut [T],
    t: u64,
    lr: f64,
    betas: (f64, f64),
    eps: f64,
) {
    let b1 = T::from_f64c(betas.0);
    let b2 = T::from_f64c(betas.1);
    let one = T::one();
    let lr = T::from_f64c(lr);
    let eps = T::from_f64c(eps);
    let bc1 = T::from_f64c(1.0 - betas.0.powi(t as i32));
    let bc2 = T::from_f64c(1.0 - betas.1.powi(t as i32));

    for i in 0..param.len() {
        let g = grad[i];
        m[i] = b1 * m[i] + (one - b1) * g;
        v[i] = b2 * v[i] + (one - b2) * g * g;
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        param[i] = param[i] - lr * m_hat / (v_hat.sqrt() + eps);
    }
}

/// Apply one Adam step to every parameter, reading gradients from the tape.
pub fn adam_step<T: Scalar>(
    params: &[(String, Tensor<T>)],
    state: &mut AdamState<T>,
    lr: f64,
    betas: (f64, f64),
    eps: f64,
) -> Result<(), TrainError> {
    if state.m.is_empty() {
        state.m = params.iter().map(|(_, p)| vec![T::zero(); p.numel()]).collect();
        state.v = state.m.clone();
    }
    if state.m.len() != params.len() {
        return Err(TrainError::Tensor(TensorError::Shape(format!(
            "adam state tracks {} tensors, model has {}",
            state.m.len(),
            params.len()
        ))));
    }
    state.step += 1;
    for (i, (name, p)) in params.iter().enumerate() {
        let grad = p.grad().ok_or_else(|| {
            TrainError::Tensor(TensorError::Shape(format!("no gradient for {name}")))
        })?;
        if grad.len() != state.m[i].len() {
            return Err(TrainError::Tensor(TensorError::Shape(format!(
                "gradient size changed for {name}"
            ))));
        }
        let mut values = p.values();
        adam_update(
            &mut values,
            &grad,
            &mut state.m[i],
            &mut state.v[i],
            state.step,
            lr,
            betas,
            eps,
        );
        p.set_values(&values);
    }
    Ok(())
}

/// Per-epoch training statistics plus validation checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    pub peak_val_accuracy: f64,
    pub peak_epoch: Option<usize>,
}

/// History as CSV (`epoch,train_loss,train_acc,val_acc`), the validation
/// column blank on epochs without one.
pub fn history_csv(history: &TrainHistory) -> String {
    let mut out = String::from("epoch,train_loss,train_acc,val_acc\n");
    for r in &history.epochs {
        let val = r.val_accuracy.map(|v| v.to_string()).unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{}\n",
            r.epoch, r.train_loss, r.train_accuracy, val
        ));
    }
    out
}

/// Everything the training loop needs: raw labeled segments for the train
/// split (re-augmented every epoch) and pre-featurized validation
/// spectrograms.
pub struct TrainData {
    pub train_segments: Vec<Segment>,
    pub val_specs: Vec<Spectrogram>,
    pub mel: MelConfig,
    pub aug: AugmentConfig,
    pub sample_rate: u32,
    pub standardize: bool,
    pub augment: bool,
}

/// Result of a run: the peak-validation checkpoint (serialized), where it
/// occurred, and the full history. The model itself holds the final-epoch
/// weights.
pub struct TrainOutcome {
    pub best_checkpoint: Vec<u8>,
    pub best_epoch: Option<usize>,
    pub history: TrainHistory,
}

fn augment_featurize(
    seg: &Segment,
    data: &TrainData,
    seed: u64,
    epoch: usize,
    item: usize,
) -> Result<Spectrogram, TrainError> {
    let mut rng = rng_for(&[seed, 0xfea7, epoch as u64, item as u64]);
    let seg = if data.augment {
        time_shift(seg, &mut rng, data.aug.max_shift_fraction)
    } else {
        seg.clone()
    };
    let mut spec = mel_spectrogram(&seg, &data.mel, data.sample_rate)?;
    if data.augment {
        spec = spec_mask(&spec, &mut rng, &data.aug);
    }
    Ok(if data.standardize { normalize(&spec) } else { spec })
}

/// Stack spectrograms into a `[B, 1, n_mels, n_frames]` batch.
pub fn stack_specs<T: Scalar>(specs: &[&Spectrogram]) -> Tensor<T> {
    let (mels, frames) = (specs[0].n_mels, specs[0].n_frames);
    let mut data = Vec::with_capacity(specs.len() * mels * frames);
    for s in specs {
        assert_eq!((s.n_mels, s.n_frames), (mels, frames));
        data.extend(s.values.iter().map(|&v| T::from_f64c(f64::from(v))));
    }
    Tensor::from_vec(&[specs.len(), 1, mels, frames], data)
}

fn labels_of(specs: &[&Spectrogram]) -> Result<Vec<usize>, TrainError> {
    specs
        .iter()
        .map(|s| {
            s.label
                .map(|k| k.index())
                .ok_or_else(|| TrainError::Data("unlabeled spectrogram".into()))
        })
        .collect()
}

/// Accuracy of eval-mode top-1 predictions over a spectrogram set.
pub fn accuracy_on<T: Scalar>(
    model: &Classifier<T>,
    specs: &[Spectrogram],
    batch_size: usize,
) -> Result<f64, TrainError> {
    if specs.is_empty() {
        return Err(TrainError::Data("empty evaluation set".into()));
    }
    let mut correct = 0usize;
    for chunk in specs.chunks(batch_size) {
        let refs: Vec<&Spectrogram> = chunk.iter().collect();
        let labels = labels_of(&refs)?;
        let x = stack_specs::<T>(&refs);
        let top = model.predict_topk(&x, 1)?;
        correct += top
            .iter()
            .zip(&labels)
            .filter(|(ranked, &l)| ranked[0] == l)
            .count();
    }
    Ok(correct as f64 / specs.len() as f64)
}

/// Train `model` in place. Every epoch the train set is reshuffled and
/// re-augmented; every `validate_every` epochs the model switches to eval
/// mode, measures validation accuracy, and checkpoints when it improves.
/// Returns the peak checkpoint (final weights when no validation ran) and
/// the history.
pub fn train<T: Scalar>(
    model: &mut Classifier<T>,
    data: &TrainData,
    cfg: &RunConfig,
) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    if data.train_segments.is_empty() {
        return Err(TrainError::Data("empty training split".into()));
    }
    let n_classes = model.config.n_classes;
    let train_labels: Vec<usize> = data
        .train_segments
        .iter()
        .map(|s| {
            s.label
                .map(|k| k.index())
                .ok_or_else(|| TrainError::Data("unlabeled training segment".into()))
        })
        .collect::<Result<_, _>>()?;
    if let Some(&bad) = train_labels.iter().find(|&&l| l >= n_classes) {
        return Err(TrainError::Data(format!(
            "label {bad} out of range for {n_classes} classes"
        )));
    }

    let n = data.train_segments.len();
    let mut adam = AdamState::<T>::new();
    let mut history = TrainHistory::default();
    let mut best: Option<(f64, usize, Vec<u8>)> = None;

    model.set_mode(Mode::Train);
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng_for(&[cfg.seed, 0x7368_7566, epoch as u64]));
        let lr = lr_at(epoch, cfg);

        let mut loss_sum = 0.0f64;
        let mut correct = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            let specs: Vec<Spectrogram> = batch
                .par_iter()
                .map(|&i| augment_featurize(&data.train_segments[i], data, cfg.seed, epoch, i))
                .collect::<Result<_, _>>()?;
            let refs: Vec<&Spectrogram> = specs.iter().collect();
            let labels: Vec<usize> = batch.iter().map(|&i| train_labels[i]).collect();

            let x = stack_specs::<T>(&refs);
            let logits = model.forward(&x)?;
            let loss = logits.cross_entropy(&labels)?;
            model.zero_grads();
            loss.backward()?;
            adam_step(&model.parameters(), &mut adam, lr, cfg.betas, cfg.eps)?;

            loss_sum += loss.value_at(0).to_f64c() * batch.len() as f64;
            let ranked = rank_logits(&logits.values(), n_classes, 1);
            correct += ranked
                .iter()
                .zip(&labels)
                .filter(|(r, &l)| r[0] == l)
                .count();
        }

        let mut record = EpochRecord {
            epoch,
            train_loss: loss_sum / n as f64,
            train_accuracy: correct as f64 / n as f64,
            val_accuracy: None,
        };

        if (epoch + 1) % cfg.validate_every == 0 && !data.val_specs.is_empty() {
            model.set_mode(Mode::Eval);
            let val_acc = accuracy_on(model, &data.val_specs, cfg.batch_size)?;
            model.set_mode(Mode::Train);
            record.val_accuracy = Some(val_acc);
            if best.as_ref().map_or(true, |(b, _, _)| val_acc > *b) {
                best = Some((val_acc, epoch, checkpoint_bytes(model)));
            }
        }
        history.epochs.push(record);
    }

    let (best_checkpoint, best_epoch) = match best {
        Some((acc, epoch, bytes)) => {
            history.peak_val_accuracy = acc;
            history.peak_epoch = Some(epoch);
            (bytes, Some(epoch))
        }
        None => (checkpoint_bytes(model), None),
    };
    Ok(TrainOutcome {
        best_checkpoint,
        best_epoch,
        history,
    })
}

/// Deterministic eval-mode inference over a test set: true labels plus the
/// full class ranking per sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOutput {
    pub true_labels: Vec<usize>,
    pub rankings: Vec<Vec<usize>>,
}

pub fn evaluate<T: Scalar>(
    model: &Classifier<T>,
    test: &[Spectrogram],
    batch_size: usize,
) -> Result<EvalOutput, TrainError> {
    if test.is_empty() {
        return Err(TrainError::Data("empty test set".into()));
    }
    let k = model.config.n_classes;
    let mut true_labels = Vec::with_capacity(test.len());
    let mut rankings = Vec::with_capacity(test.len());
    for chunk in test.chunks(batch_size) {
        let refs: Vec<&Spectrogram> = chunk.iter().collect();
        true_labels.extend(labels_of(&refs)?);
        let x = stack_specs::<T>(&refs);
        rankings.extend(model.predict_topk(&x, k)?);
    }
    Ok(EvalOutput {
        true_labels,
        rankings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::keys::KeyClass;
    use crate::nn::ModelConfig;

    fn balanced_labels(classes: usize, per_class: usize) -> Vec<usize> {
        (0..classes).flat_map(|c| std::iter::repeat_n(c, per_class)).collect()
    }

    fn assert_disjoint_exhaustive(split: &Split, n: usize) {
        let mut seen = vec![0u8; n];
        for &i in split.train.iter().chain(&split.val).chain(&split.test) {
            seen[i] += 1;
        }
        assert!(seen.iter().all(|&c| c == 1), "indices missing or duplicated");
    }

    #[test]
    fn stratified_split_gives_five_test_items_per_class() {
        let labels = balanced_labels(36, 25);
        let spec = SplitSpec {
            mode: SplitMode::Stratified,
            ..SplitSpec::default()
        };
        let split = split_dataset(&labels, &spec).unwrap();
        assert_eq!(split.test.len(), 180);
        assert_disjoint_exhaustive(&split, 900);
        for class in 0..36 {
            let count = split.test.iter().filter(|&&i| labels[i] == class).count();
            assert_eq!(count, 5);
        }
        // per-class val floor(0.1*25) = 2, train takes the remainder
        assert_eq!(split.val.len(), 72);
        assert_eq!(split.train.len(), 648);
    }

    #[test]
    fn random_split_cuts_at_floors() {
        let labels = vec![0usize; 8];
        let spec = SplitSpec {
            mode: SplitMode::Random,
            train_fraction: 0.5,
            val_fraction: 0.25,
            test_fraction: 0.25,
            seed: 3,
        };
        let split = split_dataset(&labels, &spec).unwrap();
        assert_eq!((split.train.len(), split.val.len(), split.test.len()), (4, 2, 2));
        assert_disjoint_exhaustive(&split, 8);
    }

    #[test]
    fn identical_seeds_give_identical_splits() {
        let labels = balanced_labels(6, 10);
        for mode in [SplitMode::Random, SplitMode::Stratified] {
            let spec = SplitSpec { mode, seed: 11, ..SplitSpec::default() };
            assert_eq!(split_dataset(&labels, &spec).unwrap(), split_dataset(&labels, &spec).unwrap());
        }
    }

    #[test]
    fn invalid_fractions_are_config_errors() {
        let labels = vec![0usize; 10];
        for bad in [
            SplitSpec { train_fraction: 0.8, val_fraction: 0.1, test_fraction: 0.2, ..SplitSpec::default() },
            SplitSpec { train_fraction: 1.0, val_fraction: 0.0, test_fraction: 0.0, ..SplitSpec::default() },
        ] {
            assert!(matches!(split_dataset(&labels, &bad), Err(TrainError::Config(_))));
        }
    }

    #[test]
    fn stratified_rejects_empty_class() {
        // class 1 has no items although class 2 exists
        let labels = vec![0, 0, 0, 2, 2, 2, 0, 2, 0, 2];
        let spec = SplitSpec { mode: SplitMode::Stratified, ..SplitSpec::default() };
        assert!(matches!(split_dataset(&labels, &spec), Err(TrainError::Stratify(_))));
    }

    #[test]
    fn lr_schedule_anchors() {
        let cfg = RunConfig { epochs: 1100, ..RunConfig::default() };
        assert_eq!(lr_at(0, &cfg), 5e-4);
        assert!((lr_at(550, &cfg) - 2.5e-4).abs() < 1e-12);
        assert!((lr_at(1099, &cfg) - 5e-4 / 1100.0).abs() < 1e-12);
        for e in 1..1100 {
            assert!(lr_at(e, &cfg) < lr_at(e - 1, &cfg));
        }
    }

    #[test]
    fn adam_zero_gradient_leaves_params_unchanged() {
        let mut p = vec![1.0f64, -2.0];
        let (mut m, mut v) = (vec![0.0; 2], vec![0.0; 2]);
        adam_update(&mut p, &[0.0, 0.0], &mut m, &mut v, 1, 1e-3, (0.9, 0.999), 1e-8);
        assert_eq!(p, vec![1.0, -2.0]);
    }

    #[test]
    fn adam_first_step_magnitude_is_lr() {
        let mut p = vec![0.0f64];
        let (mut m, mut v) = (vec![0.0], vec![0.0]);
        adam_update(&mut p, &[1.0], &mut m, &mut v, 1, 5e-4, (0.9, 0.999), 1e-8);
        // bias-corrected first step: lr * g / (|g| + eps) for |g| = 1
        assert!((p[0].abs() - 5e-4).abs() < 1e-6 * 5e-4 + 1e-12);
    }

    /// Five Adam steps on a 2-parameter quadratic against an independent
    /// transcription of the recurrences.
    #[test]
    fn adam_five_step_trace_matches_reference() {
        let betas = (0.9, 0.999);
        let (lr, eps) = (0.05, 1e-8);
        let grad_of = |p: &[f64]| vec![2.0 * 3.0 * p[0], 2.0 * 0.5 * p[1]]; // d/dp of 3p0^2 + 0.5p1^2

        // implementation under test
        let mut p = vec![1.0f64, -2.0];
        let (mut m, mut v) = (vec![0.0; 2], vec![0.0; 2]);
        let mut trace = Vec::new();
        for t in 1..=5 {
            let g = grad_of(&p);
            adam_update(&mut p, &g, &mut m, &mut v, t, lr, betas, eps);
            trace.push(p.clone());
        }

        // reference recurrences, written out directly
        let mut rp = vec![1.0f64, -2.0];
        let (mut rm, mut rv) = (vec![0.0f64; 2], vec![0.0f64; 2]);
        for t in 1..=5u32 {
            let g = grad_of(&rp);
            for i in 0..2 {
                rm[i] = betas.0 * rm[i] + (1.0 - betas.0) * g[i];
                rv[i] = betas.1 * rv[i] + (1.0 - betas.1) * g[i] * g[i];
                let mh = rm[i] / (1.0 - betas.0.powi(t as i32));
                let vh = rv[i] / (1.0 - betas.1.powi(t as i32));
                rp[i] -= lr * mh / (vh.sqrt() + eps);
            }
            for i in 0..2 {
                assert!(
                    (trace[t as usize - 1][i] - rp[i]).abs() <= 1e-6,
                    "step {t} param {i}: {} vs {}",
                    trace[t as usize - 1][i],
                    rp[i]
                );
            }
        }
    }

    // --- loop-level tests on a tiny model -----------------------------------

    fn tiny_model(classes: usize, seed: u64) -> Classifier<f32> {
        let cfg = ModelConfig {
            input_channels: 1,
            input_size: 64,
            stem_channels: 4,
            stage_channels: [4, 8, 8, 8],
            attention_heads: 2,
            rel_bias_clamp: 7,
            n_classes: classes,
            ln_eps: 1e-5,
        };
        Classifier::init(&cfg, seed).unwrap()
    }

    /// Distinct per-class sine bursts, enough for a classifier to overfit.
    fn toy_segments(classes: usize, per_class: usize, seed: u64) -> Vec<Segment> {
        use rand::Rng;
        let mut out = Vec::new();
        for c in 0..classes {
            for i in 0..per_class {
                let mut rng = rng_for(&[seed, c as u64, i as u64]);
                let f = 600.0 + 900.0 * c as f64;
                let mut samples = vec![0.0f32; crate::isolation::SEGMENT_LEN];
                for (t, s) in samples.iter_mut().enumerate().take(6000) {
                    let decay = (-(t as f64) / 2500.0).exp();
                    *s = (decay
                        * (2.0 * std::f64::consts::PI * f * t as f64 / 44100.0).sin()
                        * 0.4
                        + rng.random_range(-0.005..0.005)) as f32;
                }
                out.push(Segment {
                    samples,
                    peak_sample: 0,
                    label: Some(KeyClass(c as u8)),
                });
            }
        }
        out
    }

    fn toy_data(classes: usize, per_class: usize, augment: bool) -> TrainData {
        TrainData {
            train_segments: toy_segments(classes, per_class, 77),
            val_specs: Vec::new(),
            mel: MelConfig::default(),
            aug: AugmentConfig::default(),
            sample_rate: 44100,
            standardize: true,
            augment,
        }
    }

    #[test]
    fn two_class_subset_overfits_to_perfect_training_accuracy() {
        let mut model = tiny_model(2, 5);
        let mut data = toy_data(2, 5, false);
        data.val_specs = crate::features::build_dataset(
            &data.train_segments,
            &data.mel,
            &data.aug,
            44100,
            0,
            false,
        )
        .unwrap();
        let cfg = RunConfig {
            epochs: 200,
            batch_size: 16,
            max_lr: 2e-3,
            seed: 1,
            ..RunConfig::default()
        };
        let outcome = train(&mut model, &data, &cfg).unwrap();
        let last = outcome.history.epochs.last().unwrap();
        assert_eq!(last.train_accuracy, 1.0, "loop failed to overfit 10 samples");
        assert!(outcome.history.peak_val_accuracy > 0.9);
    }

    #[test]
    fn validation_runs_exactly_every_fifth_epoch() {
        let mut model = tiny_model(2, 6);
        let mut data = toy_data(2, 3, true);
        data.val_specs = crate::features::build_dataset(
            &data.train_segments,
            &data.mel,
            &data.aug,
            44100,
            0,
            false,
        )
        .unwrap();
        let cfg = RunConfig { epochs: 12, seed: 2, ..RunConfig::default() };
        let outcome = train(&mut model, &data, &cfg).unwrap();
        let val_epochs: Vec<usize> = outcome
            .history
            .epochs
            .iter()
            .filter(|r| r.val_accuracy.is_some())
            .map(|r| r.epoch)
            .collect();
        assert_eq!(val_epochs, vec![4, 9]);
    }

    #[test]
    fn identical_seeds_reproduce_history_and_checkpoint() {
        let run = || {
            let mut model = tiny_model(3, 7);
            let mut data = toy_data(3, 4, true);
            data.val_specs = crate::features::build_dataset(
                &data.train_segments,
                &data.mel,
                &data.aug,
                44100,
                0,
                false,
            )
            .unwrap();
            let cfg = RunConfig { epochs: 10, seed: 9, ..RunConfig::default() };
            train(&mut model, &data, &cfg).unwrap()
        };
        let a = run();
        let b = run();
        assert_eq!(a.history, b.history);
        assert_eq!(a.best_checkpoint, b.best_checkpoint);
    }

    #[test]
    fn empty_training_split_is_data_error() {
        let mut model = tiny_model(2, 8);
        let data = TrainData {
            train_segments: Vec::new(),
            val_specs: Vec::new(),
            mel: MelConfig::default(),
            aug: AugmentConfig::default(),
            sample_rate: 44100,
            standardize: true,
            augment: true,
        };
        let cfg = RunConfig { epochs: 1, ..RunConfig::default() };
        assert!(matches!(train(&mut model, &data, &cfg), Err(TrainError::Data(_))));
    }

    #[test]
    fn evaluate_returns_full_rankings_and_is_repeatable() {
        let mut model = tiny_model(2, 9);
        model.set_mode(Mode::Eval);
        let data = toy_data(2, 3, false);
        let specs = crate::features::build_dataset(
            &data.train_segments,
            &data.mel,
            &data.aug,
            44100,
            0,
            false,
        )
        .unwrap();
        let a = evaluate(&model, &specs, 4).unwrap();
        let b = evaluate(&model, &specs, 4).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.true_labels.len(), 6);
        for r in &a.rankings {
            let mut sorted = r.clone();
            sorted.sort_unstable();
            assert_eq!(sorted, vec![0, 1]);
        }
        assert!(matches!(evaluate(&model, &[], 4), Err(TrainError::Data(_))));
    }

    #[test]
    fn history_csv_layout() {
        let history = TrainHistory {
            epochs: vec![
                EpochRecord { epoch: 0, train_loss: 3.5, train_accuracy: 0.125, val_accuracy: None },
                EpochRecord { epoch: 4, train_loss: 2.0, train_accuracy: 0.5, val_accuracy: Some(0.25) },
            ],
            peak_val_accuracy: 0.25,
            peak_epoch: Some(4),
        };
        assert_eq!(
            history_csv(&history),
            "epoch,train_loss,train_acc,val_acc\n0,3.5,0.125,\n4,2,0.5,0.25\n"
        );
    }
}
