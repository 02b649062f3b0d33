//! Attack-quality reporting: confusion matrix, precision/recall/F1 report,
//! top-k accuracy, and a keyboard-distance profile of the misclassifications.

use image::ImageEncoder;
use thiserror::Error;

use crate::keys::{KeyClass, N_KEYS};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("empty input: {0}")]
    Data(String),
    #[error("invalid configuration: {0}")]
    Config(String),
}

/// Square count matrix; `counts[true][predicted]`. The paper's plot walks
/// true classes along the X axis and predictions along Y; rows here are the
/// true class.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    pub n_classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn from_pairs(
        true_labels: &[usize],
        predicted: &[usize],
        n_classes: usize,
    ) -> Result<Self, MetricsError> {
        if true_labels.len() != predicted.len() {
            return Err(MetricsError::Shape(format!(
                "{} truths vs {} predictions",
                true_labels.len(),
                predicted.len()
            )));
        }
        let mut counts = vec![0u64; n_classes * n_classes];
        for (&t, &p) in true_labels.iter().zip(predicted) {
            if t >= n_classes || p >= n_classes {
                return Err(MetricsError::Shape(format!(
                    "label pair ({t}, {p}) outside [0, {n_classes})"
                )));
            }
            counts[t * n_classes + p] += 1;
        }
        Ok(ConfusionMatrix { n_classes, counts })
    }

    pub fn count(&self, true_class: usize, predicted: usize) -> u64 {
        self.counts[true_class * self.n_classes + predicted]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.n_classes).map(|c| self.count(c, c)).sum()
    }

    /// Per-true-class totals (the support column).
    pub fn row_sum(&self, true_class: usize) -> u64 {
        self.counts[true_class * self.n_classes..(true_class + 1) * self.n_classes]
            .iter()
            .sum()
    }

    /// Per-predicted-class totals.
    pub fn col_sum(&self, predicted: usize) -> u64 {
        (0..self.n_classes).map(|t| self.count(t, predicted)).sum()
    }

    pub fn off_diagonal_total(&self) -> u64 {
        self.total() - self.trace()
    }

    /// CSV with key characters as header row and column.
    pub fn to_csv(&self) -> String {
        let name = |c: usize| {
            KeyClass::new(c as u8)
                .filter(|_| self.n_classes == N_KEYS)
                .map(|k| k.to_char().to_string())
                .unwrap_or_else(|| c.to_string())
        };
        let mut out = String::from("true\\pred");
        for p in 0..self.n_classes {
            out.push(',');
            out.push_str(&name(p));
        }
        out.push('\n');
        for t in 0..self.n_classes {
            out.push_str(&name(t));
            for p in 0..self.n_classes {
                out.push(',');
                out.push_str(&self.count(t, p).to_string());
            }
            out.push('\n');
        }
        out
    }

    /// Grayscale heatmap (upscaled 10x, brighter = more counts).
    pub fn to_png(&self) -> Vec<u8> {
        let scale = 10u32;
        let n = self.n_classes as u32;
        let max = self.counts.iter().copied().max().unwrap_or(1).max(1);
        let mut img = image::GrayImage::new(n * scale, n * scale);
        for t in 0..self.n_classes {
            for p in 0..self.n_classes {
                let v = (self.count(t, p) as f64 / max as f64 * 255.0).round() as u8;
                for dy in 0..scale {
                    for dx in 0..scale {
                        img.put_pixel(p as u32 * scale + dx, t as u32 * scale + dy, image::Luma([v]));
                    }
                }
            }
        }
        let mut bytes = Vec::new();
        image::codecs::png::PngEncoder::new(&mut bytes)
            .write_image(img.as_raw(), img.width(), img.height(), image::ExtendedColorType::L8)
            .expect("png encode");
        bytes
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Averages {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Per-class and averaged precision/recall/F1. Zero denominators yield zero
/// rates (noted in the rendered report).
#[derive(Debug, Clone, PartialEq)]
pub struct ClassificationReport {
    pub per_class: Vec<ClassMetrics>,
    pub accuracy: f64,
    pub macro_avg: Averages,
    pub weighted_avg: Averages,
    pub total_support: u64,
}

pub fn classification_report(cm: &ConfusionMatrix) -> Result<ClassificationReport, MetricsError> {
    let total = cm.total();
    if total == 0 {
        return Err(MetricsError::Data("confusion matrix has no samples".into()));
    }
    let ratio = |num: u64, den: u64| if den == 0 { 0.0 } else { num as f64 / den as f64 };

    let per_class: Vec<ClassMetrics> = (0..cm.n_classes)
        .map(|c| {
            let diag = cm.count(c, c);
            let precision = ratio(diag, cm.col_sum(c));
            let recall = ratio(diag, cm.row_sum(c));
            let f1 = if precision + recall == 0.0 {
                0.0
            } else {
                2.0 * precision * recall / (precision + recall)
            };
            ClassMetrics {
                precision,
                recall,
                f1,
                support: cm.row_sum(c),
            }
        })
        .collect();

    let k = cm.n_classes as f64;
    let macro_avg = Averages {
        precision: per_class.iter().map(|m| m.precision).sum::<f64>() / k,
        recall: per_class.iter().map(|m| m.recall).sum::<f64>() / k,
        f1: per_class.iter().map(|m| m.f1).sum::<f64>() / k,
    };
    let weighted = |f: fn(&ClassMetrics) -> f64| {
        per_class
            .iter()
            .map(|m| f(m) * m.support as f64)
            .sum::<f64>()
            / total as f64
    };
    let weighted_avg = Averages {
        precision: weighted(|m| m.precision),
        recall: weighted(|m| m.recall),
        f1: weighted(|m| m.f1),
    };

    Ok(ClassificationReport {
        per_class,
        accuracy: cm.trace() as f64 / total as f64,
        macro_avg,
        weighted_avg,
        total_support: total,
    })
}

/// Aligned plain-text rendering in the usual report layout: one row per
/// class, then Accuracy / Macro Avg / Weighted Avg.
pub fn report_text(report: &ClassificationReport) -> String {
    let class_name = |c: usize| {
        KeyClass::new(c as u8)
            .filter(|_| report.per_class.len() == N_KEYS)
            .map(|k| k.to_char().to_string())
            .unwrap_or_else(|| c.to_string())
    };
    let mut out = String::new();
    out.push_str(&format!(
        "{:<14}{:>10}{:>10}{:>10}{:>10}\n",
        "", "Precision", "Recall", "F1-Score", "Support"
    ));
    for (c, m) in report.per_class.iter().enumerate() {
        out.push_str(&format!(
            "{:<14}{:>10.2}{:>10.2}{:>10.2}{:>10}\n",
            class_name(c),
            m.precision,
            m.recall,
            m.f1,
            m.support
        ));
    }
    out.push('\n');
    out.push_str(&format!(
        "{:<14}{:>10}{:>10}{:>10.2}{:>10}\n",
        "Accuracy", "_", "_", report.accuracy, report.total_support
    ));
    out.push_str(&format!(
        "{:<14}{:>10.2}{:>10.2}{:>10.2}{:>10}\n",
        "Macro Avg",
        report.macro_avg.precision,
        report.macro_avg.recall,
        report.macro_avg.f1,
        report.total_support
    ));
    out.push_str(&format!(
        "{:<14}{:>10.2}{:>10.2}{:>10.2}{:>10}\n",
        "Weighted Avg",
        report.weighted_avg.precision,
        report.weighted_avg.recall,
        report.weighted_avg.f1,
        report.total_support
    ));
    out.push_str("\n(zero-denominator precision/recall reported as 0)\n");
    out
}

/// Fraction of samples whose true label appears in the first `k` entries of
/// its ranking.
pub fn top_k_accuracy(
    rankings: &[Vec<usize>],
    true_labels: &[usize],
    k: usize,
) -> Result<f64, MetricsError> {
    if rankings.len() != true_labels.len() {
        return Err(MetricsError::Shape(format!(
            "{} rankings vs {} labels",
            rankings.len(),
            true_labels.len()
        )));
    }
    if rankings.is_empty() {
        return Err(MetricsError::Data("no predictions".into()));
    }
    if k == 0 || rankings.iter().any(|r| r.len() < k) {
        return Err(MetricsError::Config(format!(
            "k = {k} exceeds a prediction list"
        )));
    }
    let hits = rankings
        .iter()
        .zip(true_labels)
        .filter(|(r, t)| r[..k].contains(t))
        .count();
    Ok(hits as f64 / rankings.len() as f64)
}

/// Physical key positions on an ANSI QWERTY grid. Rows: digits, then
/// qwerty/asdf/zxcv rows with offsets {0, 0.5, 0.75, 1.25} key units,
/// rounded onto a half-key grid. Columns are stored in half-key units so
/// distances stay exact integers.
#[derive(Debug, Clone)]
pub struct KeyboardLayout {
    coords: Vec<(i64, i64)>, // (row, column in half-key units)
}

impl KeyboardLayout {
    pub fn qwerty() -> Self {
        let rows: [(&str, f64); 4] = [
            ("1234567890", 0.0),
            ("qwertyuiop", 0.5),
            ("asdfghjkl", 0.75),
            ("zxcvbnm", 1.25),
        ];
        let mut coords = vec![(0i64, 0i64); N_KEYS];
        for (row_idx, (keys, offset)) in rows.iter().enumerate() {
            for (col_idx, ch) in keys.chars().enumerate() {
                let key = KeyClass::from_char(ch).expect("layout key");
                let col_half = (2.0 * (col_idx as f64 + offset)).round() as i64;
                coords[key.index()] = (row_idx as i64, col_half);
            }
        }
        KeyboardLayout { coords }
    }

    pub fn coord(&self, key: KeyClass) -> (i64, i64) {
        self.coords[key.index()]
    }

    /// Chebyshev distance between two keys, in half-key units.
    pub fn distance_half(&self, a: KeyClass, b: KeyClass) -> i64 {
        let (ra, ca) = self.coord(a);
        let (rb, cb) = self.coord(b);
        (2 * (ra - rb).abs()).max((ca - cb).abs())
    }
}

/// Distribution of misclassification distances on the keyboard grid.
#[derive(Debug, Clone, PartialEq)]
pub struct NearMissProfile {
    /// (distance in key units, error count), ascending by distance.
    pub histogram: Vec<(f64, u64)>,
    pub total_errors: u64,
    pub fraction_within_one: f64,
    pub fraction_within_two: f64,
}

/// Weight every off-diagonal confusion cell by its Chebyshev key distance.
pub fn near_miss_profile(cm: &ConfusionMatrix, layout: &KeyboardLayout) -> NearMissProfile {
    assert_eq!(cm.n_classes, N_KEYS, "layout covers the 36-key space");
    let mut by_half: std::collections::BTreeMap<i64, u64> = std::collections::BTreeMap::new();
    for t in 0..cm.n_classes {
        for p in 0..cm.n_classes {
            if t == p {
                continue;
            }
            let count = cm.count(t, p);
            if count == 0 {
                continue;
            }
            let d = layout.distance_half(KeyClass(t as u8), KeyClass(p as u8));
            *by_half.entry(d).or_insert(0) += count;
        }
    }
    let total_errors: u64 = by_half.values().sum();
    let within = |half: i64| {
        if total_errors == 0 {
            0.0
        } else {
            by_half
                .iter()
                .filter(|(d, _)| **d <= half)
                .map(|(_, c)| *c)
                .sum::<u64>() as f64
                / total_errors as f64
        }
    };
    NearMissProfile {
        fraction_within_one: within(2),
        fraction_within_two: within(4),
        histogram: by_half
            .into_iter()
            .map(|(d, c)| (d as f64 / 2.0, c))
            .collect(),
        total_errors,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_predictions_are_diagonal() {
        let labels: Vec<usize> = (0..36).collect();
        let cm = ConfusionMatrix::from_pairs(&labels, &labels, 36).unwrap();
        assert_eq!(cm.trace(), 36);
        assert_eq!(cm.off_diagonal_total(), 0);
        let report = classification_report(&cm).unwrap();
        assert_eq!(report.accuracy, 1.0);
        assert_eq!(report.macro_avg.f1, 1.0);
        assert_eq!(report.weighted_avg.precision, 1.0);
    }

    #[test]
    fn hand_counted_cells() {
        let cm = ConfusionMatrix::from_pairs(&[0, 0, 1], &[0, 1, 1], 2).unwrap();
        assert_eq!(cm.count(0, 0), 1);
        assert_eq!(cm.count(0, 1), 1);
        assert_eq!(cm.count(1, 1), 1);
        assert_eq!(cm.count(1, 0), 0);
        assert_eq!(cm.total(), 3);
    }

    #[test]
    fn mismatched_lengths_are_rejected() {
        assert!(matches!(
            ConfusionMatrix::from_pairs(&[0, 1], &[0], 2),
            Err(MetricsError::Shape(_))
        ));
    }

    #[test]
    fn three_class_hand_report() {
        // truths {0,0,1,2}, preds {0,1,1,2}
        let cm = ConfusionMatrix::from_pairs(&[0, 0, 1, 2], &[0, 1, 1, 2], 3).unwrap();
        let r = classification_report(&cm).unwrap();
        assert_eq!(r.accuracy, 0.75);
        assert_eq!(r.per_class[0].precision, 1.0);
        assert_eq!(r.per_class[0].recall, 0.5);
        assert_eq!(r.per_class[1].precision, 0.5);
        assert_eq!(r.per_class[1].recall, 1.0);
        assert_eq!(r.per_class[2].precision, 1.0);
        // weighted recall equals accuracy
        assert!((r.weighted_avg.recall - r.accuracy).abs() < 1e-12);
        // macro precision: (1 + 0.5 + 1) / 3
        assert!((r.macro_avg.precision - 2.5 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn balanced_supports_make_macro_equal_weighted() {
        let truths: Vec<usize> = (0..4).flat_map(|c| [c, c]).collect();
        let preds: Vec<usize> = vec![0, 0, 1, 2, 2, 2, 3, 1];
        let cm = ConfusionMatrix::from_pairs(&truths, &preds, 4).unwrap();
        let r = classification_report(&cm).unwrap();
        assert!((r.macro_avg.recall - r.weighted_avg.recall).abs() < 1e-12);
        assert!((r.macro_avg.f1 - r.weighted_avg.f1).abs() < 1e-12);
    }

    #[test]
    fn top_k_behaviour() {
        let rankings = vec![vec![3, 1], vec![2, 9]];
        let truths = vec![3, 5];
        assert_eq!(top_k_accuracy(&rankings, &truths, 2).unwrap(), 0.5);
        assert_eq!(top_k_accuracy(&rankings, &truths, 1).unwrap(), 0.5);
        assert!(matches!(
            top_k_accuracy(&rankings, &truths, 3),
            Err(MetricsError::Config(_))
        ));

        // monotone non-decreasing in k; k = n always 1.0
        let full: Vec<Vec<usize>> = vec![(0..36).collect(), (0..36).rev().collect()];
        let truths = vec![17, 2];
        let mut prev = 0.0;
        for k in 1..=36 {
            let acc = top_k_accuracy(&full, &truths, k).unwrap();
            assert!(acc >= prev);
            prev = acc;
        }
        assert_eq!(top_k_accuracy(&full, &truths, 36).unwrap(), 1.0);
    }

    fn key(c: char) -> KeyClass {
        KeyClass::from_char(c).unwrap()
    }

    #[test]
    fn adjacent_keys_are_distance_one() {
        let layout = KeyboardLayout::qwerty();
        assert_eq!(layout.distance_half(key('f'), key('g')), 2);
        assert_eq!(layout.distance_half(key('f'), key('h')), 4);
        assert_eq!(layout.distance_half(key('q'), key('1')), 2);
        assert_eq!(layout.distance_half(key('a'), key('a')), 0);
        // all coordinates unique
        let mut seen = std::collections::HashSet::new();
        for k in KeyClass::all() {
            assert!(seen.insert(layout.coord(k)));
        }
    }

    #[test]
    fn near_miss_spec_example() {
        // errors {f->g, f->h, a->p}
        let truths = vec![key('f').index(), key('f').index(), key('a').index()];
        let preds = vec![key('g').index(), key('h').index(), key('p').index()];
        let cm = ConfusionMatrix::from_pairs(&truths, &preds, 36).unwrap();
        let profile = near_miss_profile(&cm, &KeyboardLayout::qwerty());
        assert_eq!(profile.total_errors, 3);
        assert!((profile.fraction_within_one - 1.0 / 3.0).abs() < 1e-12);
        assert!((profile.fraction_within_two - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn near_miss_mass_matches_off_diagonal() {
        let truths = vec![0usize, 0, 1, 5, 9, 20, 20];
        let preds = vec![0usize, 3, 1, 6, 9, 21, 4];
        let cm = ConfusionMatrix::from_pairs(&truths, &preds, 36).unwrap();
        let profile = near_miss_profile(&cm, &KeyboardLayout::qwerty());
        assert_eq!(profile.total_errors, cm.off_diagonal_total());
        let mass: u64 = profile.histogram.iter().map(|(_, c)| c).sum();
        assert_eq!(mass, profile.total_errors);
    }

    #[test]
    fn diagonal_only_matrix_has_empty_profile() {
        let truths: Vec<usize> = (0..36).collect();
        let cm = ConfusionMatrix::from_pairs(&truths, &truths, 36).unwrap();
        let profile = near_miss_profile(&cm, &KeyboardLayout::qwerty());
        assert!(profile.histogram.is_empty());
        assert_eq!(profile.total_errors, 0);
    }

    #[test]
    fn csv_and_png_exports() {
        let cm = ConfusionMatrix::from_pairs(&[0, 1], &[0, 1], 36).unwrap();
        let csv = cm.to_csv();
        assert!(csv.starts_with("true\\pred,0,1,2"));
        assert_eq!(csv.lines().count(), 37);
        let png = cm.to_png();
        let img = image::load_from_memory(&png).unwrap();
        assert_eq!((img.width(), img.height()), (360, 360));
    }

    #[test]
    fn report_text_has_summary_rows() {
        let cm = ConfusionMatrix::from_pairs(&[0, 0, 1, 2], &[0, 1, 1, 2], 3).unwrap();
        let text = report_text(&classification_report(&cm).unwrap());
        assert!(text.contains("Precision"));
        assert!(text.contains("Accuracy"));
        assert!(text.contains("Macro Avg"));
        assert!(text.contains("Weighted Avg"));
        assert!(text.contains("0.75"));
    }
}
