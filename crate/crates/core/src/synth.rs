//! Synthetic keystroke audio: per-key acoustic signatures, multi-press
//! recordings with ground-truth onsets, a Zoom-style degradation that makes
//! press volumes wildly uneven, and fake-keystroke injection.
//!
//! Signatures are deliberately separable (each class owns distinct resonant
//! frequencies), so the corpus validates the pipeline's machinery rather
//! than claiming real-keyboard difficulty.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio::{save_wav, AudioClip, AudioError};
use crate::isolation::SEGMENT_LEN;
use crate::keys::{KeyClass, N_KEYS};
use crate::util::rng_for;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid corpus spec: {0}")]
    Config(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Audio(#[from] AudioError),
    #[error("manifest serialization: {0}")]
    Json(#[from] serde_json::Error),
}

/// Frequency band available to key resonances, within Nyquist at 44.1 kHz.
const FREQ_LO: f64 = 400.0;
const FREQ_HI: f64 = 8000.0;
/// Base amplitude of a push transient before per-press jitter.
const PUSH_AMPLITUDE: f64 = 0.45;

/// The acoustic identity of one key: three resonant frequencies plus
/// push/release shaping, all derived deterministically from
/// `(corpus seed, class)`.
#[derive(Debug, Clone, PartialEq)]
pub struct KeySignature {
    pub class: KeyClass,
    pub frequencies: [f64; 3],
    /// Release amplitude as a fraction of the push amplitude.
    pub release_ratio: f64,
    /// Seconds between the push and release transients.
    pub release_delay: f64,
}

impl KeySignature {
    /// Derive the signature for a class. Each class owns a distinct slot on
    /// three interleaved frequency grids; the jitter never reaches half the
    /// slot spacing, so signatures cannot collide across classes.
    pub fn derive(corpus_seed: u64, class: KeyClass) -> Self {
        let mut rng = rng_for(&[corpus_seed, 0x5169, class.0 as u64]);
        let c = class.index() as f64;
        let slot = |base: f64, pos: f64, j: f64| base + pos * 190.0 + j;
        let jitter = |rng: &mut rand_chacha::ChaCha8Rng| rng.random_range(-45.0..45.0);

        let p7 = ((class.index() * 7 + 3) % N_KEYS) as f64;
        let p13 = ((class.index() * 13 + 5) % N_KEYS) as f64;
        let frequencies = [
            slot(450.0, c, jitter(&mut rng)),
            slot(520.0, p7, jitter(&mut rng)),
            slot(610.0, p13, jitter(&mut rng)),
        ];
        debug_assert!(frequencies.iter().all(|f| (FREQ_LO..=FREQ_HI).contains(f)));

        // The release must stay subordinate to every push in the energy
        // envelope, even when per-press jitter (+-20%) and degradation gain
        // rides (down to 1 - severity) reorder press volumes; a ratio below
        // ~0.13 keeps the strongest release under the weakest push.
        KeySignature {
            class,
            frequencies,
            release_ratio: rng.random_range(0.07..0.10),
            release_delay: rng.random_range(0.08..0.15),
        }
    }
}

/// Render the deterministic two-transient template of a signature (no
/// jitter, no noise): exponentially decaying sinusoids for the push, a
/// scaled copy after the release delay.
pub fn keystroke_template(sig: &KeySignature, sample_rate: u32) -> Vec<f32> {
    render_keystroke(sig, sample_rate, 1.0, [0.0; 3], [0.0; 3], 0.0)
}

fn render_keystroke(
    sig: &KeySignature,
    sample_rate: u32,
    amp_scale: f64,
    freq_jitter: [f64; 3],
    phases: [f64; 3],
    delay_jitter: f64,
) -> Vec<f32> {
    let sr = f64::from(sample_rate);
    let weights = [1.0, 0.6, 0.35];
    let decays = [0.006, 0.0045, 0.003]; // seconds
    let release_at = ((sig.release_delay + delay_jitter) * sr).round() as usize;

    let mut out = vec![0.0f32; SEGMENT_LEN];
    for (k, &f) in sig.frequencies.iter().enumerate() {
        let f = f * (1.0 + freq_jitter[k]);
        let w = 2.0 * std::f64::consts::PI * f / sr;
        let amp = PUSH_AMPLITUDE * amp_scale * weights[k];
        let tau = decays[k] * sr;
        for t in 0..SEGMENT_LEN {
            let push = amp * (-(t as f64) / tau).exp() * (w * t as f64 + phases[k]).sin();
            let mut v = push;
            if t >= release_at {
                let rt = (t - release_at) as f64;
                v += sig.release_ratio * amp * (-rt / tau).exp() * (w * rt + phases[k]).cos();
            }
            out[t] += v as f32;
        }
    }
    out
}

/// One keystroke waveform with per-press jitter: amplitude within ±20%,
/// frequency within ±1%, random phases, slight release-delay wobble.
pub fn synth_keystroke<R: Rng>(sig: &KeySignature, rng: &mut R) -> Vec<f32> {
    let amp_scale = rng.random_range(0.8..1.2);
    let freq_jitter = [
        rng.random_range(-0.01..0.01),
        rng.random_range(-0.01..0.01),
        rng.random_range(-0.01..0.01),
    ];
    let phases = [
        rng.random_range(0.0..std::f64::consts::TAU),
        rng.random_range(0.0..std::f64::consts::TAU),
        rng.random_range(0.0..std::f64::consts::TAU),
    ];
    let delay_jitter = rng.random_range(-0.005..0.005);
    render_keystroke(sig, 44100, amp_scale, freq_jitter, phases, delay_jitter)
}

/// Shape of the synthetic corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusSpec {
    pub keys: usize,
    pub presses_per_key: usize,
    /// Mean inter-press interval, seconds.
    pub gap_secs: f64,
    /// Uniform jitter applied to each interval, seconds.
    pub gap_jitter: f64,
    /// White-noise floor amplitude.
    pub noise_floor: f64,
    pub sample_rate: u32,
    pub seed: u64,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        CorpusSpec {
            keys: N_KEYS,
            presses_per_key: 25,
            gap_secs: 0.5,
            gap_jitter: 0.1,
            noise_floor: 0.002,
            sample_rate: 44100,
            seed: 0,
        }
    }
}

impl CorpusSpec {
    /// Presses must stay separable: the smallest possible gap has to exceed
    /// the segment duration.
    pub fn validate(&self) -> Result<(), SynthError> {
        if self.keys == 0 || self.keys > N_KEYS {
            return Err(SynthError::Config(format!(
                "keys must be in [1, {N_KEYS}], got {}",
                self.keys
            )));
        }
        if self.presses_per_key < 1 {
            return Err(SynthError::Config("presses_per_key must be >= 1".into()));
        }
        let segment_secs = SEGMENT_LEN as f64 / f64::from(self.sample_rate);
        if self.gap_secs - self.gap_jitter <= segment_secs {
            return Err(SynthError::Config(format!(
                "minimum press gap {:.3}s must exceed the segment duration {:.3}s",
                self.gap_secs - self.gap_jitter,
                segment_secs
            )));
        }
        if !(0.0..0.5).contains(&self.noise_floor) {
            return Err(SynthError::Config("noise floor out of range".into()));
        }
        Ok(())
    }
}

/// All presses of one key in a single clip, plus the exact onset sample of
/// each press.
pub fn synth_recording(spec: &CorpusSpec, key: KeyClass) -> Result<(AudioClip, Vec<usize>), SynthError> {
    spec.validate()?;
    let sr = f64::from(spec.sample_rate);
    let sig = KeySignature::derive(spec.seed, key);
    let mut gap_rng = rng_for(&[spec.seed, 0x9a9, key.0 as u64]);

    let mut onsets = Vec::with_capacity(spec.presses_per_key);
    let mut at = (0.4 * sr) as usize;
    for _ in 0..spec.presses_per_key {
        onsets.push(at);
        let gap = spec.gap_secs + gap_rng.random_range(-spec.gap_jitter..=spec.gap_jitter);
        at += (gap * sr).round() as usize;
    }

    let len = onsets.last().unwrap() + SEGMENT_LEN + (0.5 * sr) as usize;
    let mut samples = vec![0.0f32; len];
    for (press, &onset) in onsets.iter().enumerate() {
        let mut press_rng = rng_for(&[spec.seed, 0x9e55, key.0 as u64, press as u64]);
        let wave = synth_keystroke(&sig, &mut press_rng);
        for (i, &v) in wave.iter().enumerate() {
            samples[onset + i] += v;
        }
    }
    if spec.noise_floor > 0.0 {
        let mut noise_rng = rng_for(&[spec.seed, 0x4015e, key.0 as u64]);
        for s in samples.iter_mut() {
            *s += noise_rng.random_range(-spec.noise_floor..spec.noise_floor) as f32;
        }
    }
    Ok((AudioClip::new(samples, spec.sample_rate, 1), onsets))
}

/// Zoom-style degradation: a slowly wandering per-press gain ride (up to
/// `severity` attenuation), soft tanh compression blended in by severity,
/// and one-pole low-pass smoothing above ~16 kHz. Severity 0 is the
/// identity. Every stage is non-expansive, so the output peak never exceeds
/// the input peak, and length and rate are unchanged.
pub fn zoom_degrade<R: Rng>(clip: &AudioClip, rng: &mut R, severity: f64) -> AudioClip {
    assert!((0.0..=1.0).contains(&severity), "severity in [0, 1]");
    if severity == 0.0 {
        return clip.clone();
    }
    let sr = f64::from(clip.sample_rate);
    let n = clip.samples.len();

    // gain control points every 0.35 s, linearly interpolated
    let hop = (0.35 * sr) as usize;
    let n_points = n / hop + 2;
    let points: Vec<f64> = (0..n_points)
        .map(|_| 1.0 - severity * rng.random_range(0.0..1.0))
        .collect();

    let drive = 1.0 + 2.0 * severity;
    let alpha = 1.0 - (-2.0 * std::f64::consts::PI * 16_000.0 / sr).exp();

    let mut out = Vec::with_capacity(n);
    let mut lp = 0.0f64;
    for (i, &s) in clip.samples.iter().enumerate() {
        let seg = i / hop;
        let frac = (i % hop) as f64 / hop as f64;
        let gain = points[seg] * (1.0 - frac) + points[seg + 1] * frac;
        let x = f64::from(s) * gain;
        let compressed = (1.0 - severity) * x + severity * (drive * x).tanh() / drive;
        lp += alpha * (compressed - lp);
        out.push(lp as f32);
    }
    AudioClip::new(out, clip.sample_rate, clip.channels)
}

/// Superimpose fake keystroke transients at Poisson-distributed times with
/// freshly drawn random signatures. Returns the defended clip and the
/// injected onsets. Rate 0 is the identity.
pub fn inject_fake_keystrokes<R: Rng>(
    clip: &AudioClip,
    rng: &mut R,
    rate_per_sec: f64,
) -> (AudioClip, Vec<usize>) {
    assert!(rate_per_sec >= 0.0);
    if rate_per_sec == 0.0 {
        return (clip.clone(), Vec::new());
    }
    let sr = f64::from(clip.sample_rate);
    let mut samples = clip.samples.clone();
    let mut onsets = Vec::new();

    let mut t = 0.0f64;
    loop {
        let u: f64 = rng.random_range(f64::EPSILON..1.0);
        t += -u.ln() / rate_per_sec;
        let onset = (t * sr) as usize;
        if onset + SEGMENT_LEN > samples.len() {
            break;
        }
        let class = KeyClass(rng.random_range(0..N_KEYS as u8));
        let fake_seed: u64 = rng.random_range(0..u64::MAX);
        let sig = KeySignature::derive(fake_seed, class);
        let wave = synth_keystroke(&sig, rng);
        for (i, &v) in wave.iter().enumerate() {
            samples[onset + i] += v;
        }
        onsets.push(onset);
    }
    (AudioClip::new(samples, clip.sample_rate, clip.channels), onsets)
}

/// Manifest entry for one corpus recording.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub class: KeyClass,
    pub onsets: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub files: Vec<ManifestEntry>,
    pub spec: CorpusSpec,
    pub seed: u64,
}

/// Generate every recording in memory: `(class, clip, ground-truth onsets)`
/// per key, in class order.
pub fn generate_corpus(spec: &CorpusSpec) -> Result<Vec<(KeyClass, AudioClip, Vec<usize>)>, SynthError> {
    spec.validate()?;
    (0..spec.keys as u8)
        .map(|c| {
            let key = KeyClass(c);
            let (clip, onsets) = synth_recording(spec, key)?;
            Ok((key, clip, onsets))
        })
        .collect()
}

/// Write one float-32 WAV per key plus `manifest.json` into `out_dir`.
pub fn build_corpus(spec: &CorpusSpec, out_dir: impl AsRef<Path>) -> Result<CorpusManifest, SynthError> {
    let out_dir = out_dir.as_ref();
    std::fs::create_dir_all(out_dir)?;
    let mut files = Vec::with_capacity(spec.keys);
    for (key, clip, onsets) in generate_corpus(spec)? {
        let name = format!("key_{}.wav", key.to_char());
        save_wav(&clip, out_dir.join(&name))?;
        files.push(ManifestEntry {
            path: name,
            class: key,
            onsets,
        });
    }
    let manifest = CorpusManifest {
        files,
        spec: spec.clone(),
        seed: spec.seed,
    };
    std::fs::write(
        out_dir.join("manifest.json"),
        serde_json::to_vec_pretty(&manifest)?,
    )?;
    Ok(manifest)
}
