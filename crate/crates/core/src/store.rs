//! On-disk tensor stores: raw little-endian float-32 data, row-major, with a
//! JSON sidecar describing shape, labels, and provenance. Segments and
//! spectrograms share the format; the sidecar sits next to the data file
//! with a `.json` extension.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{MelConfig, Spectrogram};
use crate::isolation::{Segment, SEGMENT_LEN};
use crate::keys::KeyClass;
use crate::util::{f32s_from_le_bytes, f32s_to_le_bytes};

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("sidecar error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("malformed store: {0}")]
    Malformed(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoreMeta {
    pub kind: String,
    pub shape: Vec<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub labels: Option<Vec<KeyClass>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub peak_samples: Option<Vec<u64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mel_config: Option<MelConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

fn sidecar_path(data_path: &Path) -> PathBuf {
    data_path.with_extension("json")
}

fn write_store(path: &Path, meta: &StoreMeta, data: &[f32]) -> Result<(), StoreError> {
    let expected: usize = meta.shape.iter().product();
    if expected != data.len() {
        return Err(StoreError::Malformed(format!(
            "shape {:?} does not cover {} values",
            meta.shape,
            data.len()
        )));
    }
    std::fs::write(path, f32s_to_le_bytes(data))?;
    std::fs::write(sidecar_path(path), serde_json::to_vec_pretty(meta)?)?;
    Ok(())
}

fn read_store(path: &Path) -> Result<(StoreMeta, Vec<f32>), StoreError> {
    let meta: StoreMeta = serde_json::from_slice(&std::fs::read(sidecar_path(path))?)?;
    let data = f32s_from_le_bytes(&std::fs::read(path)?)
        .ok_or_else(|| StoreError::Malformed("data not a float-32 multiple".into()))?;
    let expected: usize = meta.shape.iter().product();
    if expected != data.len() {
        return Err(StoreError::Malformed(format!(
            "sidecar shape {:?} vs {} stored values",
            meta.shape,
            data.len()
        )));
    }
    Ok((meta, data))
}

/// Write segments as an `[n, 14400]` store. Labels go to the sidecar when
/// every segment has one; mixed labeling is rejected.
pub fn save_segments(
    path: impl AsRef<Path>,
    segments: &[Segment],
    seed: Option<u64>,
) -> Result<(), StoreError> {
    let labeled = segments.iter().filter(|s| s.label.is_some()).count();
    if labeled != 0 && labeled != segments.len() {
        return Err(StoreError::Malformed(
            "segments are partially labeled; label all or none".into(),
        ));
    }
    let labels = (labeled == segments.len() && !segments.is_empty())
        .then(|| segments.iter().map(|s| s.label.unwrap()).collect());
    let meta = StoreMeta {
        kind: "segments".into(),
        shape: vec![segments.len(), SEGMENT_LEN],
        labels,
        peak_samples: Some(segments.iter().map(|s| s.peak_sample as u64).collect()),
        mel_config: None,
        seed,
    };
    let mut data = Vec::with_capacity(segments.len() * SEGMENT_LEN);
    for s in segments {
        if s.samples.len() != SEGMENT_LEN {
            return Err(StoreError::Malformed(format!(
                "segment of {} samples",
                s.samples.len()
            )));
        }
        data.extend_from_slice(&s.samples);
    }
    write_store(path.as_ref(), &meta, &data)
}

pub fn load_segments(path: impl AsRef<Path>) -> Result<Vec<Segment>, StoreError> {
    let (meta, data) = read_store(path.as_ref())?;
    if meta.kind != "segments" || meta.shape.len() != 2 || meta.shape[1] != SEGMENT_LEN {
        return Err(StoreError::Malformed(format!(
            "expected a segments store, found kind {} shape {:?}",
            meta.kind, meta.shape
        )));
    }
    let n = meta.shape[0];
    let peaks = meta.peak_samples.unwrap_or_else(|| vec![0; n]);
    if peaks.len() != n {
        return Err(StoreError::Malformed("peak list length mismatch".into()));
    }
    if let Some(labels) = &meta.labels {
        if labels.len() != n {
            return Err(StoreError::Malformed("label list length mismatch".into()));
        }
    }
    Ok((0..n)
        .map(|i| Segment {
            samples: data[i * SEGMENT_LEN..(i + 1) * SEGMENT_LEN].to_vec(),
            peak_sample: peaks[i] as usize,
            label: meta.labels.as_ref().map(|l| l[i]),
        })
        .collect())
}

/// Write spectrograms as an `[n, n_mels, n_frames]` store with the mel
/// configuration and creation seed in the sidecar.
pub fn save_spectrograms(
    path: impl AsRef<Path>,
    specs: &[Spectrogram],
    mel: &MelConfig,
    seed: Option<u64>,
) -> Result<(), StoreError> {
    if specs.is_empty() {
        return Err(StoreError::Malformed("no spectrograms to save".into()));
    }
    let (mels, frames) = (specs[0].n_mels, specs[0].n_frames);
    let labeled = specs.iter().filter(|s| s.label.is_some()).count();
    if labeled != 0 && labeled != specs.len() {
        return Err(StoreError::Malformed(
            "spectrograms are partially labeled; label all or none".into(),
        ));
    }
    let labels = (labeled == specs.len()).then(|| specs.iter().map(|s| s.label.unwrap()).collect());
    let meta = StoreMeta {
        kind: "spectrograms".into(),
        shape: vec![specs.len(), mels, frames],
        labels,
        peak_samples: None,
        mel_config: Some(mel.clone()),
        seed,
    };
    let mut data = Vec::with_capacity(specs.len() * mels * frames);
    for s in specs {
        if (s.n_mels, s.n_frames) != (mels, frames) {
            return Err(StoreError::Malformed("inconsistent spectrogram shapes".into()));
        }
        data.extend_from_slice(&s.values);
    }
    write_store(path.as_ref(), &meta, &data)
}

pub fn load_spectrograms(
    path: impl AsRef<Path>,
) -> Result<(Vec<Spectrogram>, StoreMeta), StoreError> {
    let (meta, data) = read_store(path.as_ref())?;
    if meta.kind != "spectrograms" || meta.shape.len() != 3 {
        return Err(StoreError::Malformed(format!(
            "expected a spectrograms store, found kind {} shape {:?}",
            meta.kind, meta.shape
        )));
    }
    let (n, mels, frames) = (meta.shape[0], meta.shape[1], meta.shape[2]);
    if let Some(labels) = &meta.labels {
        if labels.len() != n {
            return Err(StoreError::Malformed("label list length mismatch".into()));
        }
    }
    let specs = (0..n)
        .map(|i| Spectrogram {
            values: data[i * mels * frames..(i + 1) * mels * frames].to_vec(),
            n_mels: mels,
            n_frames: frames,
            label: meta.labels.as_ref().map(|l| l[i]),
        })
        .collect();
    Ok((specs, meta))
}
