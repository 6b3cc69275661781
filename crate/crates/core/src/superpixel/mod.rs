//! Superpixel partitioning and per-segment aggregation.

mod slic;

use std::collections::{BTreeMap, VecDeque};

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::tensor_io::{FeatureMap, Tensor, TensorError};

pub use slic::{rgb_to_lab, slic_segment, SlicParams};

#[derive(Debug, Error)]
pub enum SuperpixelError {
    #[error("image {width}x{height} is smaller than the 8x8 minimum")]
    ImageTooSmall { width: usize, height: usize },
    #[error("k_target {k} must be at least 2")]
    TooFewSegments { k: usize },
    #[error("k_target {k} exceeds the pixel count {pixels}")]
    TooManySegments { k: usize, pixels: usize },
    #[error("invalid SLIC parameter: {0}")]
    InvalidParameter(&'static str),
    #[error("dimension mismatch: labeling is {expected:?}, map is {found:?}")]
    DimensionMismatch {
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("edge map must have a single channel, found {0}")]
    EdgeChannels(usize),
    #[error("invalid labeling: {0}")]
    InvalidLabels(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Per-pixel segment indices covering exactly `0..count`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SuperpixelLabeling {
    width: usize,
    height: usize,
    labels: Vec<u32>,
    count: usize,
}

impl SuperpixelLabeling {
    /// Validates that every index in `0..=max(labels)` is used at least once.
    pub fn new(width: usize, height: usize, labels: Vec<u32>) -> Result<Self, SuperpixelError> {
        if width == 0 || height == 0 || labels.len() != width * height {
            return Err(SuperpixelError::InvalidLabels(format!(
                "{} labels for a {width}x{height} grid",
                labels.len()
            )));
        }
        let count = *labels.iter().max().expect("nonempty") as usize + 1;
        let mut seen = vec![false; count];
        for &l in &labels {
            seen[l as usize] = true;
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(SuperpixelError::InvalidLabels(format!(
                "segment {missing} of 0..{count} has no pixels"
            )));
        }
        Ok(Self {
            width,
            height,
            labels,
            count,
        })
    }

    pub fn from_tensor(tensor: &Tensor) -> Result<Self, SuperpixelError> {
        let labels = tensor.as_uint32()?;
        match *tensor.dims() {
            [h, w] => Self::new(w, h, labels.to_vec()),
            _ => Err(SuperpixelError::InvalidLabels(format!(
                "expected H×W label tensor, found dims {:?}",
                tensor.dims()
            ))),
        }
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::uint32(vec![self.height, self.width], self.labels.clone()).expect("valid labeling")
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn label(&self, x: usize, y: usize) -> u32 {
        self.labels[y * self.width + x]
    }

    pub fn segment_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.count];
        for &l in &self.labels {
            sizes[l as usize] += 1;
        }
        sizes
    }

    /// True when every segment forms a single 4-connected region.
    pub fn is_connected(&self) -> bool {
        let mut visited = vec![false; self.labels.len()];
        let mut seen_label = vec![false; self.count];
        let mut queue = VecDeque::new();
        for start in 0..self.labels.len() {
            if visited[start] {
                continue;
            }
            let label = self.labels[start];
            if seen_label[label as usize] {
                return false;
            }
            seen_label[label as usize] = true;
            visited[start] = true;
            queue.push_back(start);
            while let Some(p) = queue.pop_front() {
                for q in neighbors4(p, self.width, self.height) {
                    if !visited[q] && self.labels[q] == label {
                        visited[q] = true;
                        queue.push_back(q);
                    }
                }
            }
        }
        true
    }

    fn check_dims(&self, height: usize, width: usize) -> Result<(), SuperpixelError> {
        if (height, width) != (self.height, self.width) {
            return Err(SuperpixelError::DimensionMismatch {
                expected: (self.height, self.width),
                found: (height, width),
            });
        }
        Ok(())
    }
}

pub(crate) fn neighbors4(p: usize, width: usize, height: usize) -> impl Iterator<Item = usize> {
    let (x, y) = (p % width, p / width);
    [
        (x > 0).then(|| p - 1),
        (x + 1 < width).then(|| p + 1),
        (y > 0).then(|| p - width),
        (y + 1 < height).then(|| p + width),
    ]
    .into_iter()
    .flatten()
}

/// Per-superpixel means of the semantic map and the saliency map.
#[derive(Debug, Clone, PartialEq)]
pub struct SuperpixelFeatureTable {
    /// `K×D`, row `i` is the mean semantic vector of segment `i`.
    pub semantic: DMatrix<f64>,
    /// Mean saliency per segment.
    pub saliency: DVector<f64>,
}

/// Mean of `map` over the pixels of each segment; returns a `K×D` matrix.
///
/// Sums accumulate in raster order.
pub fn aggregate_mean(
    labeling: &SuperpixelLabeling,
    map: &FeatureMap,
) -> Result<DMatrix<f64>, SuperpixelError> {
    labeling.check_dims(map.height(), map.width())?;
    let d = map.channels();
    let mut sums = DMatrix::<f64>::zeros(labeling.count, d);
    let mut counts = vec![0usize; labeling.count];
    for (p, &l) in labeling.labels.iter().enumerate() {
        let l = l as usize;
        counts[l] += 1;
        let px = &map.data()[p * d..(p + 1) * d];
        for (c, &v) in px.iter().enumerate() {
            sums[(l, c)] += v;
        }
    }
    for (l, &n) in counts.iter().enumerate() {
        for c in 0..d {
            sums[(l, c)] /= n as f64;
        }
    }
    Ok(sums)
}

/// Boundary strength between two 4-adjacent segments, `a < b`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundaryEdge {
    pub a: usize,
    pub b: usize,
    pub weight: f64,
}

/// For each adjacent segment pair, the mean over straddling 4-neighbour pixel
/// pairs of the pair's mean edge value. Sorted by `(a, b)`.
pub fn boundary_edge_strengths(
    labeling: &SuperpixelLabeling,
    edge_map: &FeatureMap,
) -> Result<Vec<BoundaryEdge>, SuperpixelError> {
    labeling.check_dims(edge_map.height(), edge_map.width())?;
    if edge_map.channels() != 1 {
        return Err(SuperpixelError::EdgeChannels(edge_map.channels()));
    }
    let (w, h) = (labeling.width, labeling.height);
    let edge = edge_map.data();
    let mut acc: BTreeMap<(usize, usize), (f64, usize)> = BTreeMap::new();
    let mut visit = |p: usize, q: usize| {
        let (lp, lq) = (labeling.labels[p] as usize, labeling.labels[q] as usize);
        if lp != lq {
            let key = (lp.min(lq), lp.max(lq));
            let entry = acc.entry(key).or_insert((0.0, 0));
            entry.0 += 0.5 * (edge[p] + edge[q]);
            entry.1 += 1;
        }
    };
    for y in 0..h {
        for x in 0..w {
            let p = y * w + x;
            if x + 1 < w {
                visit(p, p + 1);
            }
            if y + 1 < h {
                visit(p, p + w);
            }
        }
    }
    Ok(acc
        .into_iter()
        .map(|((a, b), (sum, n))| BoundaryEdge {
            a,
            b,
            weight: sum / n as f64,
        })
        .collect())
}
