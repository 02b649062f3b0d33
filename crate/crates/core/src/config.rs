//! The flat `Key = Value` run configuration file. Keys mirror the model's
//! hyperparameter table verbatim; a single `Seed` drives every random
//! stream. Unknown keys are errors so typos cannot silently fall back to
//! defaults.

use std::path::Path;

use thiserror::Error;

use crate::features::{AugmentConfig, MelConfig};
use crate::synth::CorpusSpec;
use crate::training::{RunConfig, SplitMode, SplitSpec};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("config line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("invalid value for `{key}`: {message}")]
    Value { key: String, message: String },
}

/// Reference list of every config key with its default, printed by the CLI
/// help of each subcommand.
pub const CONFIG_KEYS_HELP: &str = "\
Config file keys (Key = Value, one per line, `#` comments):
  Epochs                   = 1100
  Batch Size               = 16
  Loss Type                = Cross Entropy   (fixed)
  Optimiser                = Adam            (fixed)
  Max Learning Rate        = 5e-4
  Annealing Schedule       = Linear          (fixed)
  Timeshift Percentage     = 0.4
  Max Mask Percentage      = 0.1
  Number of Masks Per Axis = 2
  Mel Bands                = 64
  FFT Window Size          = 1024
  Hop Length               = 225
  Data Split               = Random | Stratified
  Normalised Data          = Yes | No
  Seed                     = 0
  Validate Every           = 5
  Train Fraction           = 0.7
  Val Fraction             = 0.1
  Test Fraction            = 0.2
  Keys                     = 36
  Presses Per Key          = 25
  Gap Seconds              = 0.5
  Gap Jitter               = 0.1
  Noise Floor              = 0.002
  Sample Rate              = 44100";

/// Everything a pipeline run is parameterized by.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub run: RunConfig,
    pub split: SplitSpec,
    pub mel: MelConfig,
    pub aug: AugmentConfig,
    pub corpus: CorpusSpec,
    pub normalize: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            run: RunConfig::default(),
            split: SplitSpec::default(),
            mel: MelConfig::default(),
            aug: AugmentConfig::default(),
            corpus: CorpusSpec::default(),
            normalize: true,
        }
    }
}

impl PipelineConfig {
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_text(&text)
    }

    pub fn from_text(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = PipelineConfig::default();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| ConfigError::Parse {
                line: idx + 1,
                message: "expected `Key = Value`".into(),
            })?;
            cfg.apply(key.trim(), value.trim())?;
        }
        cfg.propagate_seed(cfg.run.seed);
        Ok(cfg)
    }

    /// Route one key/value pair.
    fn apply(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
        where
            T::Err: std::fmt::Display,
        {
            value.parse().map_err(|e| ConfigError::Value {
                key: key.to_string(),
                message: format!("{e}"),
            })
        }
        let fixed = |expected: &str| -> Result<(), ConfigError> {
            if value.eq_ignore_ascii_case(expected) {
                Ok(())
            } else {
                Err(ConfigError::Value {
                    key: key.to_string(),
                    message: format!("only `{expected}` is supported, got `{value}`"),
                })
            }
        };

        match key {
            "Epochs" => self.run.epochs = num(key, value)?,
            "Batch Size" => self.run.batch_size = num(key, value)?,
            "Loss Type" => fixed("Cross Entropy")?,
            "Optimiser" => fixed("Adam")?,
            "Max Learning Rate" => self.run.max_lr = num(key, value)?,
            "Annealing Schedule" => fixed("Linear")?,
            "Timeshift Percentage" => self.aug.max_shift_fraction = num(key, value)?,
            "Max Mask Percentage" => self.aug.mask_fraction = num(key, value)?,
            "Number of Masks Per Axis" => self.aug.masks_per_axis = num(key, value)?,
            "Mel Bands" => self.mel.n_mels = num(key, value)?,
            "FFT Window Size" => self.mel.n_fft = num(key, value)?,
            "Hop Length" => self.mel.hop = num(key, value)?,
            "Data Split" => {
                self.split.mode = match value.to_ascii_lowercase().as_str() {
                    "random" => SplitMode::Random,
                    "stratified" => SplitMode::Stratified,
                    other => {
                        return Err(ConfigError::Value {
                            key: key.to_string(),
                            message: format!("expected Random or Stratified, got `{other}`"),
                        })
                    }
                }
            }
            "Normalised Data" => {
                self.normalize = match value.to_ascii_lowercase().as_str() {
                    "yes" | "true" => true,
                    "no" | "false" => false,
                    other => {
                        return Err(ConfigError::Value {
                            key: key.to_string(),
                            message: format!("expected Yes or No, got `{other}`"),
                        })
                    }
                }
            }
            "Seed" => self.run.seed = num(key, value)?,
            "Validate Every" => self.run.validate_every = num(key, value)?,
            "Train Fraction" => self.split.train_fraction = num(key, value)?,
            "Val Fraction" => self.split.val_fraction = num(key, value)?,
            "Test Fraction" => self.split.test_fraction = num(key, value)?,
            "Keys" => self.corpus.keys = num(key, value)?,
            "Presses Per Key" => self.corpus.presses_per_key = num(key, value)?,
            "Gap Seconds" => self.corpus.gap_secs = num(key, value)?,
            "Gap Jitter" => self.corpus.gap_jitter = num(key, value)?,
            "Noise Floor" => self.corpus.noise_floor = num(key, value)?,
            "Sample Rate" => self.corpus.sample_rate = num(key, value)?,
            other => return Err(ConfigError::UnknownKey(other.to_string())),
        }
        Ok(())
    }

    /// One seed rules every stream (run, split, corpus).
    pub fn propagate_seed(&mut self, seed: u64) {
        self.run.seed = seed;
        self.split.seed = seed;
        self.corpus.seed = seed;
    }

    /// Canonical file rendering of this configuration.
    pub fn to_text(&self) -> String {
        let split = match self.split.mode {
            SplitMode::Random => "Random",
            SplitMode::Stratified => "Stratified",
        };
        format!(
            "Epochs = {}\nBatch Size = {}\nLoss Type = Cross Entropy\nOptimiser = Adam\n\
             Max Learning Rate = {}\nAnnealing Schedule = Linear\nTimeshift Percentage = {}\n\
             Max Mask Percentage = {}\nNumber of Masks Per Axis = {}\nMel Bands = {}\n\
             FFT Window Size = {}\nHop Length = {}\nData Split = {}\nNormalised Data = {}\n\
             Seed = {}\nValidate Every = {}\nTrain Fraction = {}\nVal Fraction = {}\n\
             Test Fraction = {}\nKeys = {}\nPresses Per Key = {}\nGap Seconds = {}\n\
             Gap Jitter = {}\nNoise Floor = {}\nSample Rate = {}\n",
            self.run.epochs,
            self.run.batch_size,
            self.run.max_lr,
            self.aug.max_shift_fraction,
            self.aug.mask_fraction,
            self.aug.masks_per_axis,
            self.mel.n_mels,
            self.mel.n_fft,
            self.mel.hop,
            split,
            if self.normalize { "Yes" } else { "No" },
            self.run.seed,
            self.run.validate_every,
            self.split.train_fraction,
            self.split.val_fraction,
            self.split.test_fraction,
            self.corpus.keys,
            self.corpus.presses_per_key,
            self.corpus.gap_secs,
            self.corpus.gap_jitter,
            self.corpus.noise_floor,
            self.corpus.sample_rate,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_hyperparameter_table() {
        let cfg = PipelineConfig::default();
        assert_eq!(cfg.run.epochs, 1100);
        assert_eq!(cfg.run.batch_size, 16);
        assert_eq!(cfg.run.max_lr, 5e-4);
        assert_eq!(cfg.aug.max_shift_fraction, 0.4);
        assert_eq!(cfg.aug.mask_fraction, 0.1);
        assert_eq!(cfg.aug.masks_per_axis, 2);
        assert_eq!(cfg.mel.n_mels, 64);
        assert_eq!(cfg.mel.n_fft, 1024);
        assert_eq!(cfg.mel.hop, 225);
        assert_eq!(cfg.split.mode, SplitMode::Random);
        assert!(cfg.normalize);
        assert_eq!(cfg.run.validate_every, 5);
    }

    #[test]
    fn file_round_trip() {
        let mut cfg = PipelineConfig::default();
        cfg.run.epochs = 120;
        cfg.split.mode = SplitMode::Stratified;
        cfg.propagate_seed(99);
        let parsed = PipelineConfig::from_text(&cfg.to_text()).unwrap();
        assert_eq!(parsed, cfg);
    }

    #[test]
    fn parses_table_keys_verbatim() {
        let text = "\
# hyperparameters
Epochs = 300
Batch Size = 8
Loss Type = Cross Entropy
Optimiser = Adam
Max Learning Rate = 1e-3
Annealing Schedule = Linear
Timeshift Percentage = 0.2
Max Mask Percentage = 0.05
Number of Masks Per Axis = 1
Mel Bands = 32
FFT Window Size = 512
Hop Length = 100
Data Split = Stratified
Normalised Data = No
Seed = 7
";
        let cfg = PipelineConfig::from_text(text).unwrap();
        assert_eq!(cfg.run.epochs, 300);
        assert_eq!(cfg.run.max_lr, 1e-3);
        assert_eq!(cfg.mel.n_fft, 512);
        assert!(!cfg.normalize);
        assert_eq!(cfg.split.mode, SplitMode::Stratified);
        // the seed propagates to every stream
        assert_eq!(cfg.run.seed, 7);
        assert_eq!(cfg.split.seed, 7);
        assert_eq!(cfg.corpus.seed, 7);
    }

    #[test]
    fn unknown_keys_and_bad_values_error() {
        assert!(matches!(
            PipelineConfig::from_text("Epocs = 100\n"),
            Err(ConfigError::UnknownKey(_))
        ));
        assert!(matches!(
            PipelineConfig::from_text("Epochs = banana\n"),
            Err(ConfigError::Value { .. })
        ));
        assert!(matches!(
            PipelineConfig::from_text("Optimiser = SGD\n"),
            Err(ConfigError::Value { .. })
        ));
        assert!(matches!(
            PipelineConfig::from_text("just some text\n"),
            Err(ConfigError::Parse { .. })
        ));
    }
}
