//! Unary region features and cross-inferred context features.
//!
//! Every superpixel ends up with four values in `[0, 1]`:
//! `[S_s, S_sctx, S_a, S_actx]`. The unary pair is the peak semantic response
//! and the mean saliency. The context pair is inferred from the other
//! superpixels through row-normalized affinities, crossing the two sources:
//! the apparent context is propagated over *semantic* similarity, the
//! semantic context over *apparent* (edge) similarity.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::superpixel::{BoundaryEdge, SuperpixelFeatureTable};
use crate::tensor_io::FeatureMap;

/// Edge-weight scale in the apparent affinity `exp(-w_e · E)`.
pub const DEFAULT_EDGE_SCALE: f64 = 3.5;

/// Column order of [`EncodedFeatures::table`].
pub const FEATURE_NAMES: [&str; 4] = ["S_s", "S_sctx", "S_a", "S_actx"];

#[derive(Debug, Error)]
pub enum EncodingError {
    #[error("edge scale w_e must be positive and finite, got {0}")]
    EdgeScale(f64),
    #[error("affinity normalization needs at least 2 superpixels, got {0}")]
    TooFewSegments(usize),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("negative value {value} in {what}")]
    Negative { what: &'static str, value: f64 },
}

/// Min-max normalizes each channel to `[0, 1]` over the whole image.
/// Constant channels become all zeros.
pub fn normalize_semantic(map: &FeatureMap) -> FeatureMap {
    let bounds = map.channel_bounds();
    let d = map.channels();
    let mut out = map.clone();
    for px in out.data_mut().chunks_exact_mut(d) {
        for (v, &(lo, hi)) in px.iter_mut().zip(&bounds) {
            *v = if hi > lo {
                ((*v - lo) / (hi - lo)).clamp(0.0, 1.0)
            } else {
                0.0
            };
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct UnaryFeatures {
    /// `S_s(i)`: largest channel of the superpixel's semantic mean.
    pub semantic: DVector<f64>,
    /// `S_a(i)`: mean saliency clamped to `[0, 1]`.
    pub apparent: DVector<f64>,
    /// L1-normalized semantic rows, zero rows kept as zero.
    pub histograms: DMatrix<f64>,
}

pub fn unary_features(table: &SuperpixelFeatureTable) -> UnaryFeatures {
    let vs = &table.semantic;
    let k = vs.nrows();
    let semantic = DVector::from_iterator(
        k,
        vs.row_iter()
            .map(|r| r.iter().copied().fold(0.0, f64::max).clamp(0.0, 1.0)),
    );
    let apparent = table.saliency.map(|v| v.clamp(0.0, 1.0));
    let mut histograms = vs.clone();
    for mut row in histograms.row_iter_mut() {
        let l1: f64 = row.iter().map(|v| v.abs()).sum();
        if l1 > 0.0 {
            row /= l1;
        }
    }
    UnaryFeatures {
        semantic,
        apparent,
        histograms,
    }
}

/// Histogram intersection `Σ_d min(h_i,d, h_j,d)` between all row pairs.
pub fn semantic_affinity(histograms: &DMatrix<f64>) -> DMatrix<f64> {
    let k = histograms.nrows();
    let rows: Vec<Vec<f64>> = histograms
        .row_iter()
        .map(|r| r.iter().copied().collect())
        .collect();
    let mut m = DMatrix::zeros(k, k);
    for i in 0..k {
        for j in i..k {
            let s: f64 = rows[i].iter().zip(&rows[j]).map(|(a, b)| a.min(*b)).sum();
            let s = s.min(1.0);
            m[(i, j)] = s;
            m[(j, i)] = s;
        }
    }
    m
}

/// `exp(-w_e · E(i, j))`; unreachable pairs (`E = ∞`) get 0.
pub fn apparent_affinity(
    edge: &DMatrix<f64>,
    edge_scale: f64,
) -> Result<DMatrix<f64>, EncodingError> {
    if !(edge_scale.is_finite() && edge_scale > 0.0) {
        return Err(EncodingError::EdgeScale(edge_scale));
    }
    if let Some(&value) = edge.iter().find(|v| **v < 0.0) {
        return Err(EncodingError::Negative {
            what: "edge matrix",
            value,
        });
    }
    Ok(edge.map(|e| (-edge_scale * e).exp()))
}

#[derive(Clone, Copy, PartialEq)]
struct Frontier {
    cost: f64,
    node: usize,
}

impl Eq for Frontier {}

impl Ord for Frontier {
    fn cmp(&self, other: &Self) -> Ordering {
        // min-heap on cost, ties on node index
        other
            .cost
            .total_cmp(&self.cost)
            .then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for Frontier {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// All-pairs shortest-path cost over the superpixel adjacency graph with
/// boundary strengths as edge costs.
///
/// `E(i, i) = 0`; pairs in different connected components get `∞`.
pub fn geodesic_edge_matrix(edges: &[BoundaryEdge], k: usize) -> DMatrix<f64> {
    let mut adjacency: Vec<Vec<(usize, f64)>> = vec![Vec::new(); k];
    for e in edges {
        let w = e.weight.max(0.0);
        adjacency[e.a].push((e.b, w));
        adjacency[e.b].push((e.a, w));
    }

    let mut out = DMatrix::from_element(k, k, f64::INFINITY);
    let mut heap = BinaryHeap::new();
    let mut dist = vec![f64::INFINITY; k];
    for source in 0..k {
        dist.fill(f64::INFINITY);
        dist[source] = 0.0;
        heap.push(Frontier {
            cost: 0.0,
            node: source,
        });
        while let Some(Frontier { cost, node }) = heap.pop() {
            if cost > dist[node] {
                continue;
            }
            for &(next, w) in &adjacency[node] {
                let c = cost + w;
                if c < dist[next] {
                    dist[next] = c;
                    heap.push(Frontier {
                        cost: c,
                        node: next,
                    });
                }
            }
        }
        for (j, &d) in dist.iter().enumerate() {
            out[(source, j)] = d;
        }
    }
    // Dijkstra from both ends can differ in the last bit
    for i in 0..k {
        for j in i + 1..k {
            let d = out[(i, j)].min(out[(j, i)]);
            out[(i, j)] = d;
            out[(j, i)] = d;
        }
    }
    out
}

/// Zeroes the diagonal and scales each row to sum to one. A row with no
/// off-diagonal mass becomes uniform `1 / (K - 1)`.
pub fn normalize_affinity(m: &DMatrix<f64>) -> Result<DMatrix<f64>, EncodingError> {
    let k = m.nrows();
    if m.ncols() != k {
        return Err(EncodingError::Shape(format!(
            "affinity is {}x{}",
            k,
            m.ncols()
        )));
    }
    if k < 2 {
        return Err(EncodingError::TooFewSegments(k));
    }
    if let Some(&value) = m.iter().find(|v| **v < 0.0) {
        return Err(EncodingError::Negative {
            what: "affinity",
            value,
        });
    }
    let mut out = m.clone();
    out.fill_diagonal(0.0);
    let uniform = 1.0 / (k - 1) as f64;
    for i in 0..k {
        let sum: f64 = out.row(i).sum();
        for j in 0..k {
            out[(i, j)] = match (i == j, sum > 0.0) {
                (true, _) => 0.0,
                (false, true) => out[(i, j)] / sum,
                (false, false) => uniform,
            };
        }
    }
    Ok(out)
}

fn propagate(weights: &DMatrix<f64>, values: &DVector<f64>) -> DVector<f64> {
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    // rows are convex weights, so the bounds only absorb rounding
    (weights * values).map(|v| v.clamp(lo, hi))
}

/// Cross inference: `S_actx = M_s' · S_a` and `S_sctx = M_a' · S_s`.
/// Returns `(S_sctx, S_actx)`.
pub fn context_features(
    semantic_norm: &DMatrix<f64>,
    apparent_norm: &DMatrix<f64>,
    unary_semantic: &DVector<f64>,
    unary_apparent: &DVector<f64>,
) -> Result<(DVector<f64>, DVector<f64>), EncodingError> {
    let k = unary_semantic.len();
    let ok = |m: &DMatrix<f64>| m.nrows() == k && m.ncols() == k;
    if unary_apparent.len() != k || !ok(semantic_norm) || !ok(apparent_norm) {
        return Err(EncodingError::Shape(format!(
            "K={k}: S_a has {}, M_s' is {}x{}, M_a' is {}x{}",
            unary_apparent.len(),
            semantic_norm.nrows(),
            semantic_norm.ncols(),
            apparent_norm.nrows(),
            apparent_norm.ncols()
        )));
    }
    let apparent_ctx = propagate(semantic_norm, unary_apparent);
    let semantic_ctx = propagate(apparent_norm, unary_semantic);
    Ok((semantic_ctx, apparent_ctx))
}

#[derive(Debug, Clone, PartialEq)]
pub struct AffinitySet {
    pub semantic: DMatrix<f64>,
    pub apparent: DMatrix<f64>,
    pub semantic_norm: DMatrix<f64>,
    pub apparent_norm: DMatrix<f64>,
    pub edge: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncodedFeatures {
    /// `K×4`, columns ordered as [`FEATURE_NAMES`].
    pub table: DMatrix<f64>,
    pub affinities: AffinitySet,
}

impl EncodedFeatures {
    pub fn len(&self) -> usize {
        self.table.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.table.nrows() == 0
    }
}

/// Builds the `K×4` feature table from per-superpixel means and the boundary graph.
pub fn encode(
    table: &SuperpixelFeatureTable,
    boundaries: &[BoundaryEdge],
    edge_scale: f64,
) -> Result<EncodedFeatures, EncodingError> {
    let k = table.semantic.nrows();
    if table.saliency.len() != k {
        return Err(EncodingError::Shape(format!(
            "{k} semantic rows but {} saliency values",
            table.saliency.len()
        )));
    }
    let unary = unary_features(table);
    let edge = geodesic_edge_matrix(boundaries, k);
    let semantic = semantic_affinity(&unary.histograms);
    let apparent = apparent_affinity(&edge, edge_scale)?;
    let semantic_norm = normalize_affinity(&semantic)?;
    let apparent_norm = normalize_affinity(&apparent)?;
    let (semantic_ctx, apparent_ctx) = context_features(
        &semantic_norm,
        &apparent_norm,
        &unary.semantic,
        &unary.apparent,
    )?;

    let mut out = DMatrix::zeros(k, 4);
    out.set_column(0, &unary.semantic);
    out.set_column(1, &semantic_ctx);
    out.set_column(2, &unary.apparent);
    out.set_column(3, &apparent_ctx);
    Ok(EncodedFeatures {
        table: out,
        affinities: AffinitySet {
            semantic,
            apparent,
            semantic_norm,
            apparent_norm,
            edge,
        },
    })
}
