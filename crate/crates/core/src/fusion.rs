//! Per-image adaptive weighting of the four encoded features.
//!
//! Superpixels on which both unary cues agree become pseudo labels: a
//! geometric mean of `S_s` and `S_a` below `th_bg` marks background (target
//! 0), above `th_fg` foreground (target 1). A weighted least-squares fit of
//! `score = features · w + bias` on those samples then scores every
//! superpixel, clamped to `[0, 1]`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::superpixel::SuperpixelLabeling;
use crate::tensor_io::{GrayImage, Tensor, TensorError};

pub const DEFAULT_BG_THRESHOLD: f64 = 0.2;
pub const DEFAULT_FG_THRESHOLD: f64 = 0.6;
pub const DEFAULT_BINARIZE_THRESHOLD: f64 = 0.5;

/// Fewer labeled superpixels than this and the fit falls back to [`FusionModel::fallback`].
pub const MIN_LABELED_SAMPLES: usize = 5;

#[derive(Debug, Error)]
pub enum FusionError {
    #[error("thresholds must satisfy 0 <= th_bg < th_fg <= 1, got th_bg={bg}, th_fg={fg}")]
    Thresholds { bg: f64, fg: f64 },
    #[error("cannot balance: {fg} foreground and {bg} background samples")]
    EmptyClass { fg: usize, bg: usize },
    #[error("length mismatch: expected {expected}, found {found}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("binarization threshold must lie in (0, 1), got {0}")]
    BinarizeThreshold(f64),
    #[error("confidence value {0} outside [0, 1]")]
    OutOfRange(f64),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Linear scorer over `[S_s, S_sctx, S_a, S_actx]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FusionModel {
    pub w: [f64; 4],
    pub bias: f64,
    pub fallback_used: bool,
}

impl FusionModel {
    /// Uniform average of the four features, used when the fit is degenerate.
    pub fn fallback() -> Self {
        Self {
            w: [0.25; 4],
            bias: 0.0,
            fallback_used: true,
        }
    }

    /// Unclamped linear response for one feature row.
    pub fn raw_score(&self, row: &[f64]) -> f64 {
        row.iter().zip(&self.w).map(|(x, w)| x * w).sum::<f64>() + self.bias
    }
}

/// Pseudo-labeled superpixels with per-sample weights.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoLabelSet {
    pub foreground: Vec<usize>,
    pub background: Vec<usize>,
    pub fg_weights: Vec<f64>,
    pub bg_weights: Vec<f64>,
}

impl PseudoLabelSet {
    /// Unit-weighted set.
    pub fn new(foreground: Vec<usize>, background: Vec<usize>) -> Self {
        let fg_weights = vec![1.0; foreground.len()];
        let bg_weights = vec![1.0; background.len()];
        Self {
            foreground,
            background,
            fg_weights,
            bg_weights,
        }
    }

    pub fn len(&self) -> usize {
        self.foreground.len() + self.background.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `(superpixel, target, weight)` triples, foreground first.
    pub fn samples(&self) -> impl Iterator<Item = (usize, f64, f64)> + '_ {
        let fg = self
            .foreground
            .iter()
            .zip(&self.fg_weights)
            .map(|(&i, &w)| (i, 1.0, w));
        let bg = self
            .background
            .iter()
            .zip(&self.bg_weights)
            .map(|(&i, &w)| (i, 0.0, w));
        fg.chain(bg)
    }
}

/// `sqrt(S_s(i) · S_a(i))`.
pub fn geometric_prior(semantic: &DVector<f64>, apparent: &DVector<f64>) -> DVector<f64> {
    assert_eq!(
        semantic.len(),
        apparent.len(),
        "unary feature lengths differ"
    );
    semantic.zip_map(apparent, |s, a| (s * a).max(0.0).sqrt())
}

/// Strict thresholds: `g < th_bg` is background, `g > th_fg` foreground,
/// anything else stays unlabeled.
pub fn select_pseudo_labels(
    prior: &DVector<f64>,
    th_bg: f64,
    th_fg: f64,
) -> Result<PseudoLabelSet, FusionError> {
    if !(0.0 <= th_bg && th_bg < th_fg && th_fg <= 1.0) {
        return Err(FusionError::Thresholds {
            bg: th_bg,
            fg: th_fg,
        });
    }
    let mut fg = Vec::new();
    let mut bg = Vec::new();
    for (i, &g) in prior.iter().enumerate() {
        if g < th_bg {
            bg.push(i);
        } else if g > th_fg {
            fg.push(i);
        }
    }
    Ok(PseudoLabelSet::new(fg, bg))
}

/// Weights the minority class up so both classes carry `max(n_fg, n_bg)` in total.
pub fn balance_samples(labels: &PseudoLabelSet) -> Result<PseudoLabelSet, FusionError> {
    let (nf, nb) = (labels.foreground.len(), labels.background.len());
    if nf == 0 || nb == 0 {
        return Err(FusionError::EmptyClass { fg: nf, bg: nb });
    }
    let total = nf.max(nb) as f64;
    Ok(PseudoLabelSet {
        foreground: labels.foreground.clone(),
        background: labels.background.clone(),
        fg_weights: vec![total / nf as f64; nf],
        bg_weights: vec![total / nb as f64; nb],
    })
}

/// Minimizes `Σ weight_r · (rows_r · w + bias − target_r)²` over `(w, bias)`.
///
/// Solved through an SVD of the `sqrt(weight)`-scaled design matrix with the
/// bias column appended, so rank-deficient problems get the minimum-norm
/// solution. Returns `None` if a weight is negative or the solve breaks down.
pub fn solve_weighted_least_squares(
    rows: &DMatrix<f64>,
    targets: &[f64],
    weights: &[f64],
) -> Option<([f64; 4], f64)> {
    let n = rows.nrows();
    assert_eq!(rows.ncols(), 4, "feature table must have four columns");
    assert!(
        targets.len() == n && weights.len() == n,
        "sample lengths differ"
    );
    if n == 0 || weights.iter().any(|w| w.is_nan() || *w < 0.0) {
        return None;
    }
    let mut design = DMatrix::zeros(n, 5);
    let mut rhs = DVector::zeros(n);
    for r in 0..n {
        let s = weights[r].sqrt();
        for c in 0..4 {
            design[(r, c)] = s * rows[(r, c)];
        }
        design[(r, 4)] = s;
        rhs[r] = s * targets[r];
    }
    let svd = design.svd(true, true);
    let eps = svd.singular_values.max() * n.max(5) as f64 * f64::EPSILON;
    let x = svd.solve(&rhs, eps).ok()?;
    x.iter()
        .all(|v| v.is_finite())
        .then(|| ([x[0], x[1], x[2], x[3]], x[4]))
}

/// Least-squares fit of `(w, bias)` to the pseudo labels of one image.
///
/// Too few samples or an empty class yields [`FusionModel::fallback`].
pub fn fit_adaptive_weights(features: &DMatrix<f64>, labels: &PseudoLabelSet) -> FusionModel {
    assert_eq!(features.ncols(), 4, "feature table must have four columns");
    if labels.len() < MIN_LABELED_SAMPLES
        || labels.foreground.is_empty()
        || labels.background.is_empty()
    {
        return FusionModel::fallback();
    }
    let n = labels.len();
    let mut rows = DMatrix::zeros(n, 4);
    let mut targets = Vec::with_capacity(n);
    let mut weights = Vec::with_capacity(n);
    for (r, (i, y, weight)) in labels.samples().enumerate() {
        rows.set_row(r, &features.row(i));
        targets.push(y);
        weights.push(weight);
    }
    match solve_weighted_least_squares(&rows, &targets, &weights) {
        Some((w, bias)) => FusionModel {
            w,
            bias,
            fallback_used: false,
        },
        None => FusionModel::fallback(),
    }
}

/// `clamp(features · w + bias, 0, 1)` per superpixel.
pub fn infer_scores(model: &FusionModel, features: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_iterator(
        features.nrows(),
        features.row_iter().map(|r| {
            let row: Vec<f64> = r.iter().copied().collect();
            let raw = model.raw_score(&row);
            if raw.is_nan() {
                0.0
            } else {
                raw.clamp(0.0, 1.0)
            }
        }),
    )
}

/// Per-pixel foreground confidence in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfidenceMap {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl ConfidenceMap {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self, FusionError> {
        if data.len() != height * width {
            return Err(FusionError::LengthMismatch {
                expected: height * width,
                found: data.len(),
            });
        }
        if let Some(&v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(FusionError::OutOfRange(v));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    /// Reads an `H×W` real32 tensor; values must already lie in `[0, 1]`.
    pub fn from_tensor(tensor: &Tensor) -> Result<Self, FusionError> {
        let values = tensor.as_real32()?;
        match *tensor.dims() {
            [h, w] => Self::new(h, w, values.iter().map(|&v| v as f64).collect()),
            _ => Err(TensorError::WrongShape {
                expected: "H×W",
                found: tensor.dims().to_vec(),
            }
            .into()),
        }
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::real32(
            vec![self.height, self.width],
            self.data.iter().map(|&v| v as f32).collect(),
        )
        .expect("confidence values are finite")
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }
}

/// Paints each pixel with its superpixel's score.
pub fn scores_to_map(
    labeling: &SuperpixelLabeling,
    scores: &DVector<f64>,
) -> Result<ConfidenceMap, FusionError> {
    if scores.len() != labeling.count() {
        return Err(FusionError::LengthMismatch {
            expected: labeling.count(),
            found: scores.len(),
        });
    }
    let data = labeling
        .labels()
        .iter()
        .map(|&l| scores[l as usize])
        .collect();
    ConfidenceMap::new(labeling.height(), labeling.width(), data)
}

/// Foreground (255) where `value >= threshold`, background (0) elsewhere.
pub fn binarize(map: &ConfidenceMap, threshold: f64) -> Result<GrayImage, FusionError> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(FusionError::BinarizeThreshold(threshold));
    }
    let data = map
        .data
        .iter()
        .map(|&v| if v >= threshold { 255 } else { 0 })
        .collect();
    Ok(GrayImage::new(map.width, map.height, data).expect("matching extents"))
}
