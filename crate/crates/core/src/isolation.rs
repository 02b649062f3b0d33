//! Keystroke isolation: FFT energy envelopes, prominence-based peak picking,
//! fixed-length segment extraction, and the adaptive threshold search that
//! recovers a known press count from recordings with wildly uneven volumes.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use thiserror::Error;

use crate::audio::AudioClip;
use crate::keys::KeyClass;

/// Samples per extracted keystroke segment (0.33 s at 44.1 kHz).
pub const SEGMENT_LEN: usize = 14400;
/// Fraction of the segment placed before the energy peak.
pub const PRE_PEAK_FRACTION: f64 = 0.25;
/// Analysis frame length for the energy envelope.
pub const FRAME_LEN: usize = 1024;
/// Hop between analysis frames.
pub const FRAME_HOP: usize = 225;

#[derive(Debug, Error)]
pub enum IsolationError {
    #[error("energy envelope requires a mono clip ({0} channels given)")]
    Channel(u16),
    #[error("clip shorter than one analysis frame ({len} < {frame_len})")]
    TooShort { len: usize, frame_len: usize },
    #[error(
        "adaptive isolation missed target {target} after {iterations} iterations \
         (closest count {closest})"
    )]
    Convergence {
        target: usize,
        iterations: usize,
        closest: usize,
        /// Closest-count result, kept so callers can inspect what was found.
        best: Box<AdaptiveIsolation>,
    },
}

/// Per-frame signal energy: sum of one-sided FFT magnitudes of each
/// Hann-windowed frame.
#[derive(Debug, Clone)]
pub struct EnergyEnvelope {
    pub values: Vec<f64>,
    pub frame_hop: usize,
    pub frame_len: usize,
    pub origin_rate: u32,
}

/// A fixed-length keystroke excerpt.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub samples: Vec<f32>,
    /// Sample index in the source recording the segment was anchored to.
    pub peak_sample: usize,
    pub label: Option<KeyClass>,
}

impl Segment {
    pub fn with_label(mut self, label: KeyClass) -> Self {
        self.label = Some(label);
        self
    }
}

/// Parameters of the adaptive threshold loop.
#[derive(Debug, Clone)]
pub struct IsolationParams {
    pub initial_prominence: f64,
    pub step: f64,
    pub target_count: usize,
    pub step_decay: f64,
    pub max_iterations: usize,
}

impl IsolationParams {
    pub fn new(initial_prominence: f64, step: f64, target_count: usize) -> Self {
        IsolationParams {
            initial_prominence,
            step,
            target_count,
            step_decay: 0.99,
            max_iterations: 2000,
        }
    }

    fn validate(&self) -> bool {
        self.step > 0.0
            && self.target_count >= 1
            && self.step_decay > 0.0
            && self.step_decay < 1.0
            && self.max_iterations >= 1
    }
}

/// One iteration of the adaptive search, for the debug trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceStep {
    pub iteration: usize,
    pub prominence: f64,
    pub step: f64,
    pub count: usize,
}

/// Successful adaptive isolation: the segments plus the search trace.
#[derive(Debug, Clone)]
pub struct AdaptiveIsolation {
    pub segments: Vec<Segment>,
    pub trace: Vec<TraceStep>,
    pub final_prominence: f64,
}

/// Render a search trace as CSV (`iteration,prominence,step,count`).
pub fn trace_csv(trace: &[TraceStep]) -> String {
    let mut out = String::from("iteration,prominence,step,count\n");
    for t in trace {
        out.push_str(&format!(
            "{},{},{},{}\n",
            t.iteration, t.prominence, t.step, t.count
        ));
    }
    out
}

/// Compute the energy envelope of a mono clip.
///
/// Each frame of `frame_len` samples (advanced by `frame_hop`) is Hann
/// windowed, transformed, and its one-sided magnitude spectrum summed.
pub fn energy_envelope(
    clip: &AudioClip,
    frame_len: usize,
    frame_hop: usize,
) -> Result<EnergyEnvelope, IsolationError> {
    if !clip.is_mono() {
        return Err(IsolationError::Channel(clip.channels));
    }
    let n = clip.samples.len();
    if n < frame_len {
        return Err(IsolationError::TooShort { len: n, frame_len });
    }
    assert!(frame_hop >= 1, "frame_hop must be >= 1");

    let window = hann(frame_len);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(frame_len);
    let n_frames = (n - frame_len) / frame_hop + 1;
    let half = frame_len / 2;

    let mut values = Vec::with_capacity(n_frames);
    let mut buf = vec![Complex::new(0.0, 0.0); frame_len];
    for f in 0..n_frames {
        let start = f * frame_hop;
        for (i, slot) in buf.iter_mut().enumerate() {
            *slot = Complex::new(f64::from(clip.samples[start + i]) * window[i], 0.0);
        }
        fft.process(&mut buf);
        values.push(buf[..=half].iter().map(|c| c.norm()).sum());
    }

    Ok(EnergyEnvelope {
        values,
        frame_hop,
        frame_len,
        origin_rate: clip.sample_rate,
    })
}

/// Periodic Hann window.
pub(crate) fn hann(len: usize) -> Vec<f64> {
    (0..len)
        .map(|i| 0.5 * (1.0 - (2.0 * std::f64::consts::PI * i as f64 / len as f64).cos()))
        .collect()
}

/// Indices of local maxima whose topographic prominence meets `prominence`,
/// ascending. The prominence of a peak is its height minus the higher of the
/// two lowest valleys separating it from higher terrain (or the signal edge
/// when no higher terrain exists on that side). A threshold of zero or below
/// admits every local maximum.
pub fn find_peaks(env: &EnergyEnvelope, prominence: f64) -> Vec<usize> {
    let v = &env.values;
    local_maxima(v)
        .into_iter()
        .filter(|&m| peak_prominence(v, m) >= prominence)
        .collect()
}

/// Every local maximum with its prominence, ascending by index.
pub fn prominent_peaks(env: &EnergyEnvelope) -> Vec<(usize, f64)> {
    let v = &env.values;
    local_maxima(v)
        .into_iter()
        .map(|m| (m, peak_prominence(v, m)))
        .collect()
}

/// A prominence threshold that selects exactly the `target` most prominent
/// peaks of this envelope: the midpoint between the target-th and
/// (target+1)-th largest prominences (or half the smallest selected
/// prominence when no further peak exists). This is how an attacker tunes a
/// fixed threshold on clean data.
pub fn calibrate_prominence(env: &EnergyEnvelope, target: usize) -> Option<f64> {
    let mut proms: Vec<f64> = prominent_peaks(env).into_iter().map(|(_, p)| p).collect();
    if proms.len() < target || target == 0 {
        return None;
    }
    proms.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let kth = proms[target - 1];
    Some(match proms.get(target) {
        Some(&next) if next < kth => (kth + next) / 2.0,
        _ => kth / 2.0,
    })
}

/// Local maxima with plateau handling: a flat run counts once, reported at
/// its midpoint.
fn local_maxima(v: &[f64]) -> Vec<usize> {
    let n = v.len();
    let mut peaks = Vec::new();
    let mut i = 1;
    while n >= 3 && i < n - 1 {
        if v[i - 1] < v[i] {
            let mut ahead = i + 1;
            while ahead < n - 1 && v[ahead] == v[i] {
                ahead += 1;
            }
            if v[ahead] < v[i] {
                peaks.push((i + ahead - 1) / 2);
                i = ahead;
                continue;
            }
        }
        i += 1;
    }
    peaks
}

/// Topographic prominence of the local maximum at `m`.
fn peak_prominence(v: &[f64], m: usize) -> f64 {
    let peak = v[m];
    let mut left_base = peak;
    for j in (0..m).rev() {
        if v[j] > peak {
            break;
        }
        left_base = left_base.min(v[j]);
    }
    let mut right_base = peak;
    for &val in &v[m + 1..] {
        if val > peak {
            break;
        }
        right_base = right_base.min(val);
    }
    peak - left_base.max(right_base)
}

/// Cut one fixed-length segment per peak. The peak is mapped to its source
/// sample position (`frame index * frame_hop`) and placed a quarter of the
/// way into the segment; regions outside the recording are zero-padded.
/// When given, `label` is attached to every segment.
pub fn extract_segments(
    clip: &AudioClip,
    peaks: &[usize],
    env: &EnergyEnvelope,
    label: Option<KeyClass>,
) -> Vec<Segment> {
    let pre = (SEGMENT_LEN as f64 * PRE_PEAK_FRACTION) as i64;
    peaks
        .iter()
        .map(|&pk| {
            let p = (pk * env.frame_hop) as i64;
            let start = p - pre;
            let mut samples = vec![0.0f32; SEGMENT_LEN];
            for (i, slot) in samples.iter_mut().enumerate() {
                let src = start + i as i64;
                if src >= 0 && (src as usize) < clip.samples.len() {
                    *slot = clip.samples[src as usize];
                }
            }
            Segment {
                samples,
                peak_sample: p as usize,
                label,
            }
        })
        .collect()
}

/// Envelope, peak picking, and extraction in one step with the module's
/// default analysis grid.
pub fn isolate_fixed(clip: &AudioClip, prominence: f64) -> Result<Vec<Segment>, IsolationError> {
    let env = energy_envelope(clip, FRAME_LEN, FRAME_HOP)?;
    let peaks = find_peaks(&env, prominence);
    Ok(extract_segments(clip, &peaks, &env, None))
}

/// Adjust the prominence threshold until exactly `target_count` keystrokes
/// are found: lower it when too few are detected, raise it when too many,
/// shrinking the step by `step_decay` each round. Fails with the
/// closest-count result when `max_iterations` passes without a hit.
pub fn isolate_adaptive(
    clip: &AudioClip,
    params: &IsolationParams,
) -> Result<AdaptiveIsolation, IsolationError> {
    assert!(params.validate(), "invalid isolation params: {params:?}");
    let env = energy_envelope(clip, FRAME_LEN, FRAME_HOP)?;

    let mut p = params.initial_prominence;
    let mut s = params.step;
    let mut trace = Vec::new();
    let mut best: Option<(usize, Vec<usize>, f64)> = None; // (|count-T|, peaks, p)

    for iteration in 0..params.max_iterations {
        let peaks = find_peaks(&env, p);
        let count = peaks.len();
        trace.push(TraceStep {
            iteration,
            prominence: p,
            step: s,
            count,
        });

        let gap = count.abs_diff(params.target_count);
        if best.as_ref().map_or(true, |(g, _, _)| gap < *g) {
            best = Some((gap, peaks.clone(), p));
        }

        if count == params.target_count {
            return Ok(AdaptiveIsolation {
                segments: extract_segments(clip, &peaks, &env, None),
                trace,
                final_prominence: p,
            });
        }
        if count < params.target_count {
            p -= s;
        } else {
            p += s;
        }
        s *= params.step_decay;
    }

    let (gap, peaks, best_p) = best.expect("max_iterations >= 1");
    let closest = peaks.len();
    let best = AdaptiveIsolation {
        segments: extract_segments(clip, &peaks, &env, None),
        trace,
        final_prominence: best_p,
    };
    let _ = gap;
    Err(IsolationError::Convergence {
        target: params.target_count,
        iterations: params.max_iterations,
        closest,
        best: Box::new(best),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn env_of(values: Vec<f64>) -> EnergyEnvelope {
        EnergyEnvelope {
            values,
            frame_hop: FRAME_HOP,
            frame_len: FRAME_LEN,
            origin_rate: 44100,
        }
    }

    #[test]
    fn single_peak_is_found() {
        assert_eq!(find_peaks(&env_of(vec![0.0, 1.0, 0.0]), 0.5), vec![1]);
    }

    #[test]
    fn monotone_envelope_has_no_peaks() {
        assert!(find_peaks(&env_of(vec![0.0, 1.0, 2.0, 3.0]), 0.0).is_empty());
    }

    #[test]
    fn prominence_separates_major_from_minor_peaks() {
        // Peak at index 1 (value 3): no higher terrain, bases are the signal
        // minima on each side -> prominence 3. Peak at index 3 (value 2):
        // left valley 1 (index 2), right edge 0 -> prominence 2 - 1 = 1.
        let env = env_of(vec![0.0, 3.0, 1.0, 2.0, 0.0]);
        assert_eq!(find_peaks(&env, 1.5), vec![1]);
        assert_eq!(find_peaks(&env, 0.5), vec![1, 3]);
        assert_eq!(find_peaks(&env, 3.1), Vec::<usize>::new());
    }

    #[test]
    fn plateau_counts_once_at_midpoint() {
        let env = env_of(vec![0.0, 2.0, 2.0, 2.0, 0.0]);
        assert_eq!(find_peaks(&env, 0.0), vec![2]);
    }

    #[test]
    fn peaks_are_ascending_and_unique() {
        let env = env_of(vec![0.0, 5.0, 0.0, 4.0, 0.0, 6.0, 0.0]);
        let peaks = find_peaks(&env, 0.0);
        assert!(peaks.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn all_zero_signal_has_zero_envelope() {
        let clip = AudioClip::new(vec![0.0; 4096], 44100, 1);
        let env = energy_envelope(&clip, FRAME_LEN, FRAME_HOP).unwrap();
        assert!(env.values.iter().all(|&v| v == 0.0));
        let expected = (4096 - FRAME_LEN) / FRAME_HOP + 1;
        assert_eq!(env.values.len(), expected);
    }

    #[test]
    fn envelope_is_homogeneous_in_amplitude() {
        let mut clip = AudioClip::new(vec![0.0; 3000], 44100, 1);
        for (i, s) in clip.samples.iter_mut().enumerate() {
            *s = (i as f32 * 0.05).sin() * 0.2;
        }
        let scaled = AudioClip::new(
            clip.samples.iter().map(|s| s * 3.0).collect(),
            44100,
            1,
        );
        let e1 = energy_envelope(&clip, FRAME_LEN, FRAME_HOP).unwrap();
        let e2 = energy_envelope(&scaled, FRAME_LEN, FRAME_HOP).unwrap();
        // inputs are f32, so the scaling is exact only to f32 rounding
        for (a, b) in e1.values.iter().zip(&e2.values) {
            assert!((b - 3.0 * a).abs() <= 1e-6 * b.abs().max(1.0));
        }
    }

    #[test]
    fn envelope_rejects_stereo_and_short_clips() {
        let stereo = AudioClip::new(vec![0.0; 4096], 44100, 2);
        assert!(matches!(
            energy_envelope(&stereo, FRAME_LEN, FRAME_HOP),
            Err(IsolationError::Channel(2))
        ));
        let short = AudioClip::new(vec![0.0; 100], 44100, 1);
        assert!(matches!(
            energy_envelope(&short, FRAME_LEN, FRAME_HOP),
            Err(IsolationError::TooShort { .. })
        ));
    }

    #[test]
    fn segments_have_fixed_length_and_place_peak_at_quarter() {
        let n = 44100;
        let mut samples = vec![0.0f32; n];
        let transient = 22050usize;
        samples[transient] = 1.0;
        let clip = AudioClip::new(samples, 44100, 1);
        let env = energy_envelope(&clip, FRAME_LEN, FRAME_HOP).unwrap();
        let peaks = find_peaks(&env, 0.0);
        let segs = extract_segments(&clip, &peaks, &env, Some(KeyClass(3)));
        for seg in &segs {
            assert_eq!(seg.samples.len(), SEGMENT_LEN);
            assert_eq!(seg.label, Some(KeyClass(3)));
            // the transient must sit close to the 25% anchor
            let hit = seg.samples.iter().position(|&s| s == 1.0).unwrap();
            let anchor = (SEGMENT_LEN as f64 * PRE_PEAK_FRACTION) as usize;
            assert!(hit.abs_diff(anchor) < FRAME_LEN + FRAME_HOP);
        }
    }

    #[test]
    fn segment_at_recording_start_is_front_padded() {
        let clip = AudioClip::new(vec![1.0; 2048], 44100, 1);
        let env = energy_envelope(&clip, FRAME_LEN, FRAME_HOP).unwrap();
        let segs = extract_segments(&clip, &[0], &env, None);
        assert_eq!(segs[0].samples.len(), SEGMENT_LEN);
        assert_eq!(segs[0].samples[0], 0.0); // zero pad before sample 0
        let pre = (SEGMENT_LEN as f64 * PRE_PEAK_FRACTION) as usize;
        assert_eq!(segs[0].samples[pre], 1.0);
    }

    #[test]
    fn silence_isolates_to_nothing() {
        let clip = AudioClip::new(vec![0.0; 44100], 44100, 1);
        assert!(isolate_fixed(&clip, 0.5).unwrap().is_empty());
    }

    #[test]
    fn adaptive_returns_immediately_when_initial_threshold_fits() {
        // two clear transients, target 2
        let mut samples = vec![0.0f32; 44100];
        samples[10000] = 1.0;
        samples[30000] = 1.0;
        let clip = AudioClip::new(samples, 44100, 1);
        let params = IsolationParams::new(1.0, 0.5, 2);
        let out = isolate_adaptive(&clip, &params).unwrap();
        assert_eq!(out.segments.len(), 2);
        assert_eq!(out.trace.len(), 1);
        assert_eq!(out.final_prominence, 1.0);
    }

    #[test]
    fn adaptive_fails_when_target_is_unreachable() {
        // one transient can never yield 3 peaks
        let mut samples = vec![0.0f32; 44100];
        samples[20000] = 1.0;
        let clip = AudioClip::new(samples, 44100, 1);
        let mut params = IsolationParams::new(5.0, 1.0, 3);
        params.max_iterations = 50;
        match isolate_adaptive(&clip, &params) {
            Err(IsolationError::Convergence { closest, best, .. }) => {
                assert!(closest <= 1);
                assert_eq!(best.trace.len(), 50);
            }
            other => panic!("expected convergence failure, got {other:?}"),
        }
    }

    #[test]
    fn trace_csv_has_header_and_rows() {
        let csv = trace_csv(&[TraceStep {
            iteration: 0,
            prominence: 1.5,
            step: 0.5,
            count: 3,
        }]);
        assert_eq!(csv, "iteration,prominence,step,count\n0,1.5,0.5,3\n");
    }
}
