//! WAV loading/saving and the canonical in-memory waveform type.
//!
//! Supports RIFF/WAVE little-endian with 16-bit integer PCM (format tag 1)
//! or 32-bit IEEE float (format tag 3). Anything else is rejected rather
//! than converted; upstream tools are expected to hand us plain `.wav`.

use std::io::Write;
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum AudioError {
    #[error("malformed wav: {0}")]
    Parse(String),
    #[error("unsupported wav encoding: {0}")]
    UnsupportedFormat(String),
    #[error("wav contains no samples")]
    EmptyAudio,
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// A sampled waveform. Samples are interleaved by frame when `channels > 1`
/// and normalized to `[-1, 1]` on load.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    pub samples: Vec<f32>,
    pub sample_rate: u32,
    pub channels: u16,
}

impl AudioClip {
    pub fn new(samples: Vec<f32>, sample_rate: u32, channels: u16) -> Self {
        debug_assert!(channels >= 1);
        debug_assert!(samples.len() % channels as usize == 0);
        AudioClip {
            samples,
            sample_rate,
            channels,
        }
    }

    /// Number of frames (samples per channel).
    pub fn frames(&self) -> usize {
        self.samples.len() / self.channels as usize
    }

    pub fn duration_secs(&self) -> f64 {
        self.frames() as f64 / self.sample_rate as f64
    }

    pub fn is_mono(&self) -> bool {
        self.channels == 1
    }
}

/// Downmix to a single channel by arithmetic mean across channels.
/// Mono input comes back unchanged.
pub fn to_mono(clip: &AudioClip) -> AudioClip {
    if clip.channels == 1 {
        return clip.clone();
    }
    let ch = clip.channels as usize;
    let samples = clip
        .samples
        .chunks_exact(ch)
        .map(|frame| frame.iter().sum::<f32>() / ch as f32)
        .collect();
    AudioClip::new(samples, clip.sample_rate, 1)
}

fn read_u16(bytes: &[u8], at: usize) -> Result<u16, AudioError> {
    bytes
        .get(at..at + 2)
        .map(|b| u16::from_le_bytes([b[0], b[1]]))
        .ok_or_else(|| AudioError::Parse("truncated header field".into()))
}

fn read_u32(bytes: &[u8], at: usize) -> Result<u32, AudioError> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| AudioError::Parse("truncated header field".into()))
}

/// Load a RIFF/WAVE file. 16-bit PCM is scaled to `[-1, 1]` by `1/32768`;
/// 32-bit float is passed through (clamped to `[-1, 1]` if out of range).
pub fn load_wav(path: impl AsRef<Path>) -> Result<AudioClip, AudioError> {
    let bytes = std::fs::read(path)?;
    parse_wav(&bytes)
}

/// Parse WAV bytes; see [`load_wav`].
pub fn parse_wav(bytes: &[u8]) -> Result<AudioClip, AudioError> {
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(AudioError::Parse("missing RIFF/WAVE header".into()));
    }

    let mut pos = 12usize;
    let mut fmt: Option<(u16, u16, u32, u16)> = None; // (format, channels, rate, bits)
    let mut data: Option<&[u8]> = None;

    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = read_u32(bytes, pos + 4)? as usize;
        let body_start = pos + 8;
        if body_start + size > bytes.len() {
            return Err(AudioError::Parse(format!(
                "chunk {:?} overruns file",
                String::from_utf8_lossy(id)
            )));
        }
        match id {
            b"fmt " => {
                if size < 16 {
                    return Err(AudioError::Parse("fmt chunk too short".into()));
                }
                let format = read_u16(bytes, body_start)?;
                let channels = read_u16(bytes, body_start + 2)?;
                let rate = read_u32(bytes, body_start + 4)?;
                let bits = read_u16(bytes, body_start + 14)?;
                fmt = Some((format, channels, rate, bits));
            }
            b"data" => {
                data = Some(&bytes[body_start..body_start + size]);
            }
            _ => {} // skip unknown chunks (LIST, fact, ...)
        }
        // chunks are word-aligned
        pos = body_start + size + (size & 1);
    }

    let (format, channels, rate, bits) =
        fmt.ok_or_else(|| AudioError::Parse("missing fmt chunk".into()))?;
    let data = data.ok_or_else(|| AudioError::Parse("missing data chunk".into()))?;

    if channels == 0 {
        return Err(AudioError::Parse("zero channels".into()));
    }
    if rate == 0 {
        return Err(AudioError::Parse("zero sample rate".into()));
    }

    let samples: Vec<f32> = match (format, bits) {
        (1, 16) => {
            if data.len() % 2 != 0 {
                return Err(AudioError::Parse("odd data length for 16-bit pcm".into()));
            }
            data.chunks_exact(2)
                .map(|c| i16::from_le_bytes([c[0], c[1]]) as f32 / 32768.0)
                .collect()
        }
        (3, 32) => {
            if data.len() % 4 != 0 {
                return Err(AudioError::Parse("data length not a float multiple".into()));
            }
            let mut out = Vec::with_capacity(data.len() / 4);
            for c in data.chunks_exact(4) {
                let v = f32::from_le_bytes([c[0], c[1], c[2], c[3]]);
                if !v.is_finite() {
                    return Err(AudioError::Parse("non-finite sample".into()));
                }
                out.push(v.clamp(-1.0, 1.0));
            }
            out
        }
        (f, b) => {
            return Err(AudioError::UnsupportedFormat(format!(
                "format tag {f} with {b} bits (want pcm16 or float32)"
            )))
        }
    };

    if samples.is_empty() {
        return Err(AudioError::EmptyAudio);
    }
    if samples.len() % channels as usize != 0 {
        return Err(AudioError::Parse("sample count not a channel multiple".into()));
    }

    Ok(AudioClip::new(samples, rate, channels))
}

/// Serialize a clip as a 32-bit IEEE float WAV. Round-trips bit-exactly
/// through [`load_wav`] for in-range samples.
pub fn wav_bytes(clip: &AudioClip) -> Vec<u8> {
    let data_len = clip.samples.len() * 4;
    let byte_rate = clip.sample_rate * u32::from(clip.channels) * 4;
    let block_align = clip.channels * 4;

    let mut out = Vec::with_capacity(44 + data_len);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len as u32).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&3u16.to_le_bytes()); // IEEE float
    out.extend_from_slice(&clip.channels.to_le_bytes());
    out.extend_from_slice(&clip.sample_rate.to_le_bytes());
    out.extend_from_slice(&byte_rate.to_le_bytes());
    out.extend_from_slice(&block_align.to_le_bytes());
    out.extend_from_slice(&32u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&(data_len as u32).to_le_bytes());
    for s in &clip.samples {
        out.extend_from_slice(&s.to_le_bytes());
    }
    out
}

/// Write a clip to disk as float-32 WAV.
pub fn save_wav(clip: &AudioClip, path: impl AsRef<Path>) -> Result<(), AudioError> {
    let mut file = std::fs::File::create(path)?;
    file.write_all(&wav_bytes(clip))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Assemble a minimal wav byte blob by hand.
    fn raw_wav(format: u16, bits: u16, channels: u16, rate: u32, data: &[u8]) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(b"RIFF");
        out.extend_from_slice(&(36 + data.len() as u32).to_le_bytes());
        out.extend_from_slice(b"WAVE");
        out.extend_from_slice(b"fmt ");
        out.extend_from_slice(&16u32.to_le_bytes());
        out.extend_from_slice(&format.to_le_bytes());
        out.extend_from_slice(&channels.to_le_bytes());
        out.extend_from_slice(&rate.to_le_bytes());
        out.extend_from_slice(&(rate * channels as u32 * (bits / 8) as u32).to_le_bytes());
        out.extend_from_slice(&(channels * bits / 8).to_le_bytes());
        out.extend_from_slice(&bits.to_le_bytes());
        out.extend_from_slice(b"data");
        out.extend_from_slice(&(data.len() as u32).to_le_bytes());
        out.extend_from_slice(data);
        out
    }

    #[test]
    fn parses_stereo_float32_metadata() {
        let data: Vec<u8> = [0.1f32, -0.1, 0.2, -0.2]
            .iter()
            .flat_map(|v| v.to_le_bytes())
            .collect();
        let clip = parse_wav(&raw_wav(3, 32, 2, 44100, &data)).unwrap();
        assert_eq!(clip.sample_rate, 44100);
        assert_eq!(clip.channels, 2);
        assert_eq!(clip.frames(), 2);
    }

    #[test]
    fn zero_length_data_is_empty_audio() {
        let err = parse_wav(&raw_wav(3, 32, 1, 44100, &[])).unwrap_err();
        assert!(matches!(err, AudioError::EmptyAudio));
    }

    #[test]
    fn pcm16_fixture_scaling() {
        // Hand-built fixture: raw i16 values {0, 16384, -16384, 32767} as LE
        // bytes {00 00, 00 40, 00 C0, FF 7F}; dividing by 32768 gives
        // {0.0, 0.5, -0.5, 32767/32768}.
        let data = [0x00u8, 0x00, 0x00, 0x40, 0x00, 0xC0, 0xFF, 0x7F];
        let clip = parse_wav(&raw_wav(1, 16, 1, 44100, &data)).unwrap();
        assert_eq!(clip.samples, vec![0.0, 0.5, -0.5, 32767.0 / 32768.0]);
    }

    #[test]
    fn unsupported_encodings_are_rejected() {
        let err = parse_wav(&raw_wav(1, 24, 1, 44100, &[0; 6])).unwrap_err();
        assert!(matches!(err, AudioError::UnsupportedFormat(_)));
        let err = parse_wav(&raw_wav(3, 64, 1, 44100, &[0; 8])).unwrap_err();
        assert!(matches!(err, AudioError::UnsupportedFormat(_)));
    }

    #[test]
    fn malformed_header_is_parse_error() {
        assert!(matches!(
            parse_wav(b"RIFX....WAVE").unwrap_err(),
            AudioError::Parse(_)
        ));
        // data chunk claims more bytes than present
        let mut bad = raw_wav(3, 32, 1, 44100, &[0; 8]);
        let n = bad.len();
        bad.truncate(n - 4);
        assert!(matches!(parse_wav(&bad).unwrap_err(), AudioError::Parse(_)));
    }

    #[test]
    fn to_mono_means_channels() {
        let stereo = AudioClip::new(vec![1.0, 0.0, 0.0, 1.0], 44100, 2);
        let mono = to_mono(&stereo);
        assert_eq!(mono.channels, 1);
        assert_eq!(mono.samples, vec![0.5, 0.5]);
        assert_eq!(mono.sample_rate, 44100);
    }

    #[test]
    fn to_mono_mono_identity_and_idempotent() {
        let m = AudioClip::new(vec![0.25, -0.75], 8000, 1);
        assert_eq!(to_mono(&m), m);
        let stereo = AudioClip::new(vec![0.5, 0.1, -0.2, 0.4], 8000, 2);
        assert_eq!(to_mono(&to_mono(&stereo)), to_mono(&stereo));
    }

    #[test]
    fn equal_channels_downmix_to_either() {
        let stereo = AudioClip::new(vec![0.3, 0.3, -0.6, -0.6], 8000, 2);
        assert_eq!(to_mono(&stereo).samples, vec![0.3, -0.6]);
    }

    #[test]
    fn float_round_trip_is_bit_exact() {
        let clip = AudioClip::new(vec![0.0, 0.125, -1.0, 1.0, 3.1e-5], 44100, 1);
        let back = parse_wav(&wav_bytes(&clip)).unwrap();
        assert_eq!(back, clip);
    }

    #[test]
    fn single_sample_round_trip() {
        let clip = AudioClip::new(vec![0.5], 22050, 1);
        let back = parse_wav(&wav_bytes(&clip)).unwrap();
        assert_eq!(back.samples, clip.samples);
    }
}
