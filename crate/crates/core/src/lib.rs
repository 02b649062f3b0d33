//! keyecho: an end-to-end acoustic keystroke side-channel pipeline.
//!
//! The crate synthesizes labeled keystroke audio, isolates individual presses
//! from long recordings, converts them to log-mel spectrograms, trains a
//! small convolution + relative self-attention classifier over 36 key
//! classes, and reports attack-quality metrics.

pub mod audio;
pub mod cli;
pub mod config;
pub mod features;
pub mod isolation;
pub mod keys;
pub mod metrics;
pub mod nn;
pub mod store;
pub mod synth;
pub mod training;
pub mod tensor;
pub mod util;

pub use audio::{load_wav, save_wav, to_mono, AudioClip, AudioError};
pub use features::{
    build_dataset, mel_filterbank, mel_spectrogram, normalize, spec_mask, time_shift,
    AugmentConfig, FeatureError, MelConfig, Spectrogram,
};
pub use isolation::{
    energy_envelope, extract_segments, find_peaks, isolate_adaptive, isolate_fixed,
    AdaptiveIsolation, EnergyEnvelope, IsolationError, IsolationParams, Segment, SEGMENT_LEN,
};
pub use keys::{KeyClass, N_KEYS};
