//! Precision/recall over 256 thresholds and the F-measure.
//!
//! Confidence maps are quantized to `0..=255`; at threshold `t` every pixel
//! with quantized value `>= t` counts as predicted foreground. Per-image
//! curves are averaged across the dataset per threshold, the F-measure is
//! taken on the averaged precision and recall, and the dataset score is the
//! maximum F over all thresholds.

use std::fmt::Write as _;

use thiserror::Error;

use crate::fusion::ConfidenceMap;
use crate::tensor_io::GrayImage;

/// Weight of precision relative to recall in the F-measure.
pub const BETA_SQ: f64 = 0.3;
pub const THRESHOLDS: usize = 256;
pub const CSV_HEADER: &str = "threshold,precision,recall,f_measure";

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("prediction has {pred} pixels but ground truth has {gt}")]
    DimensionMismatch { pred: usize, gt: usize },
    #[error("ground truth has no foreground pixels")]
    EmptyGroundTruth,
    #[error("no images to aggregate")]
    EmptyDataset,
}

/// `round(v · 255)` with halves rounded up.
pub fn quantize(map: &ConfidenceMap) -> Vec<u8> {
    map.data()
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 255.0 + 0.5).floor() as u8)
        .collect()
}

/// Ground-truth foreground: pixels with value `>= 128`.
pub fn mask_from_gray(image: &GrayImage) -> Vec<bool> {
    image.data.iter().map(|&v| v >= 128).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrPoint {
    pub precision: f64,
    pub recall: f64,
}

/// Precision and recall at each threshold `0..=255`.
///
/// An empty prediction has precision 1. Images whose ground truth has no
/// foreground are rejected with [`EvalError::EmptyGroundTruth`].
pub fn pr_at_thresholds(pred: &[u8], gt: &[bool]) -> Result<Vec<PrPoint>, EvalError> {
    if pred.len() != gt.len() {
        return Err(EvalError::DimensionMismatch {
            pred: pred.len(),
            gt: gt.len(),
        });
    }
    let mut hist_fg = [0u64; THRESHOLDS];
    let mut hist_bg = [0u64; THRESHOLDS];
    for (&p, &g) in pred.iter().zip(gt) {
        if g {
            hist_fg[p as usize] += 1;
        } else {
            hist_bg[p as usize] += 1;
        }
    }
    let positives: u64 = hist_fg.iter().sum();
    if positives == 0 {
        return Err(EvalError::EmptyGroundTruth);
    }

    let mut points = vec![
        PrPoint {
            precision: 0.0,
            recall: 0.0
        };
        THRESHOLDS
    ];
    let (mut tp, mut fp) = (0u64, 0u64);
    for t in (0..THRESHOLDS).rev() {
        tp += hist_fg[t];
        fp += hist_bg[t];
        points[t] = PrPoint {
            precision: if tp + fp == 0 {
                1.0
            } else {
                tp as f64 / (tp + fp) as f64
            },
            recall: tp as f64 / positives as f64,
        };
    }
    Ok(points)
}

/// `(1 + β²)·P·R / (β²·P + R)`, defined as 0 when the denominator vanishes.
pub fn f_measure(precision: f64, recall: f64, beta_sq: f64) -> f64 {
    let denom = beta_sq * precision + recall;
    if denom <= 0.0 {
        0.0
    } else {
        (1.0 + beta_sq) * precision * recall / denom
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrEntry {
    pub threshold: u8,
    pub precision: f64,
    pub recall: f64,
    pub f_measure: f64,
}

/// Dataset-level curve with one entry per threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct PrCurve {
    pub entries: Vec<PrEntry>,
    pub max_f: f64,
}

impl PrCurve {
    /// The entry attaining `max_f`, lowest threshold on ties.
    pub fn best(&self) -> &PrEntry {
        self.entries
            .iter()
            .find(|e| e.f_measure == self.max_f)
            .expect("max_f is attained")
    }

    /// 256 data rows under [`CSV_HEADER`], then `max_f,<value>`.
    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(64 * (THRESHOLDS + 2));
        out.push_str(CSV_HEADER);
        out.push('\n');
        for e in &self.entries {
            writeln!(
                out,
                "{},{},{},{}",
                e.threshold, e.precision, e.recall, e.f_measure
            )
            .unwrap();
        }
        writeln!(out, "max_f,{}", self.max_f).unwrap();
        out
    }
}

/// Mean precision and recall per threshold across images, F on the means.
pub fn aggregate(curves: &[Vec<PrPoint>]) -> Result<PrCurve, EvalError> {
    if curves.is_empty() {
        return Err(EvalError::EmptyDataset);
    }
    let n = curves.len() as f64;
    let entries: Vec<PrEntry> = (0..THRESHOLDS)
        .map(|t| {
            let precision = curves.iter().map(|c| c[t].precision).sum::<f64>() / n;
            let recall = curves.iter().map(|c| c[t].recall).sum::<f64>() / n;
            PrEntry {
                threshold: t as u8,
                precision,
                recall,
                f_measure: f_measure(precision, recall, BETA_SQ),
            }
        })
        .collect();
    let max_f = entries.iter().map(|e| e.f_measure).fold(0.0, f64::max);
    Ok(PrCurve { entries, max_f })
}

/// Evaluates `(prediction, ground truth)` pairs, skipping images without
/// foreground. Returns the curve and the number of skipped images.
pub fn evaluate_dataset<'a>(
    pairs: impl IntoIterator<Item = (&'a ConfidenceMap, &'a [bool])>,
) -> Result<(PrCurve, usize), EvalError> {
    let mut curves = Vec::new();
    let mut skipped = 0;
    for (pred, gt) in pairs {
        match pr_at_thresholds(&quantize(pred), gt) {
            Ok(c) => curves.push(c),
            Err(EvalError::EmptyGroundTruth) => skipped += 1,
            Err(e) => return Err(e),
        }
    }
    Ok((aggregate(&curves)?, skipped))
}

/// One row of a method comparison table.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub method: String,
    pub balanced: bool,
    pub reinferred: bool,
    pub max_f: f64,
}

/// Fixed-width comparison table: method, balancing, re-inference, F-measure.
pub fn format_report(rows: &[ReportRow]) -> String {
    let width = rows
        .iter()
        .map(|r| r.method.len())
        .max()
        .unwrap_or(0)
        .max(6);
    let mark = |b: bool| if b { "x" } else { "" };
    let mut out = format!(
        "{:<width$}  {:^8}  {:^8}  {:>9}\n",
        "method", "balance", "reinfer", "F-measure"
    );
    for r in rows {
        writeln!(
            out,
            "{:<width$}  {:^8}  {:^8}  {:>9.4}",
            r.method,
            mark(r.balanced),
            mark(r.reinferred),
            r.max_f
        )
        .unwrap();
    }
    out
}
