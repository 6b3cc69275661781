//! End-to-end segmentation of one image from its precomputed feature maps.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::encoding::{encode, normalize_semantic, EncodedFeatures, DEFAULT_EDGE_SCALE};
use crate::error::Error;
use crate::fusion::{
    balance_samples, binarize, fit_adaptive_weights, geometric_prior, infer_scores, scores_to_map,
    select_pseudo_labels, ConfidenceMap, FusionModel, PseudoLabelSet, DEFAULT_BG_THRESHOLD,
    DEFAULT_BINARIZE_THRESHOLD, DEFAULT_FG_THRESHOLD,
};
use crate::superpixel::{
    aggregate_mean, boundary_edge_strengths, slic_segment, SlicParams, SuperpixelFeatureTable,
    SuperpixelLabeling,
};
use crate::tensor_io::{
    atomic_write, resample_bilinear, write_tensor, FeatureMap, RgbImage, Tensor,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub k_target: usize,
    pub compactness: f64,
    pub edge_scale: f64,
    pub th_bg: f64,
    pub th_fg: f64,
    pub binarize_threshold: f64,
    pub balance: bool,
    pub dump_intermediates: bool,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let slic = SlicParams::default();
        Self {
            k_target: slic.k_target,
            compactness: slic.compactness,
            edge_scale: DEFAULT_EDGE_SCALE,
            th_bg: DEFAULT_BG_THRESHOLD,
            th_fg: DEFAULT_FG_THRESHOLD,
            binarize_threshold: DEFAULT_BINARIZE_THRESHOLD,
            balance: true,
            dump_intermediates: false,
            seed: 0,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), Error> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.k_target < 2 {
            return bad(format!(
                "superpixel target must be at least 2, got {}",
                self.k_target
            ));
        }
        if !(self.compactness > 0.0 && self.compactness.is_finite()) {
            return bad(format!(
                "compactness must be positive, got {}",
                self.compactness
            ));
        }
        if !(self.edge_scale > 0.0 && self.edge_scale.is_finite()) {
            return bad(format!("w_e must be positive, got {}", self.edge_scale));
        }
        if !(0.0 <= self.th_bg && self.th_bg < self.th_fg && self.th_fg <= 1.0) {
            return bad(format!(
                "need 0 <= th_bg < th_fg <= 1, got {} and {}",
                self.th_bg, self.th_fg
            ));
        }
        if !(0.0..=1.0).contains(&self.binarize_threshold) {
            return bad(format!(
                "binarize threshold must lie in [0, 1], got {}",
                self.binarize_threshold
            ));
        }
        Ok(())
    }

    pub fn slic_params(&self) -> SlicParams {
        SlicParams {
            k_target: self.k_target,
            compactness: self.compactness,
            ..SlicParams::default()
        }
    }
}

/// Inputs for one image. The semantic map may be at any resolution.
#[derive(Debug, Clone, Copy)]
pub struct SceneInputs<'a> {
    pub image: &'a RgbImage,
    pub semantic: &'a FeatureMap,
    pub saliency: &'a FeatureMap,
    pub edge: &'a FeatureMap,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentOutput {
    pub labeling: SuperpixelLabeling,
    pub table: SuperpixelFeatureTable,
    pub encoded: EncodedFeatures,
    pub prior: DVector<f64>,
    pub labels: PseudoLabelSet,
    pub model: FusionModel,
    pub scores: DVector<f64>,
    pub confidence: ConfidenceMap,
}

fn check_single_channel(name: &str, map: &FeatureMap, h: usize, w: usize) -> Result<(), Error> {
    if map.channels() != 1 || map.height() != h || map.width() != w {
        return Err(Error::Input(format!(
            "{name} map is {}x{}x{}, expected {h}x{w}",
            map.height(),
            map.width(),
            map.channels()
        )));
    }
    Ok(())
}

pub fn segment(inputs: SceneInputs<'_>, config: &RunConfig) -> Result<SegmentOutput, Error> {
    config.validate()?;
    let (h, w) = (inputs.image.height, inputs.image.width);
    check_single_channel("saliency", inputs.saliency, h, w)?;
    check_single_channel("edge", inputs.edge, h, w)?;
    if let Some(v) = inputs.edge.data().iter().find(|v| **v < 0.0) {
        return Err(Error::Input(format!("edge map holds negative value {v}")));
    }

    let semantic = if (inputs.semantic.height(), inputs.semantic.width()) == (h, w) {
        normalize_semantic(inputs.semantic)
    } else {
        log::debug!(
            "resampling semantic map {}x{} -> {h}x{w}",
            inputs.semantic.height(),
            inputs.semantic.width()
        );
        normalize_semantic(&resample_bilinear(inputs.semantic, h, w)?)
    };

    let labeling = slic_segment(inputs.image, &config.slic_params())?;
    log::debug!("{} superpixels", labeling.count());
    let table = SuperpixelFeatureTable {
        semantic: aggregate_mean(&labeling, &semantic)?,
        saliency: aggregate_mean(&labeling, inputs.saliency)?
            .column(0)
            .into_owned(),
    };
    let boundaries = boundary_edge_strengths(&labeling, inputs.edge)?;
    let encoded = encode(&table, &boundaries, config.edge_scale)?;

    let prior = geometric_prior(
        &encoded.table.column(0).into_owned(),
        &encoded.table.column(2).into_owned(),
    );
    let mut labels = select_pseudo_labels(&prior, config.th_bg, config.th_fg)?;
    log::debug!(
        "pseudo labels: {} fg, {} bg",
        labels.foreground.len(),
        labels.background.len()
    );
    if config.balance && !labels.foreground.is_empty() && !labels.background.is_empty() {
        labels = balance_samples(&labels)?;
    }
    let model = fit_adaptive_weights(&encoded.table, &labels);
    if model.fallback_used {
        log::info!("too few pseudo labels, using fallback fusion weights");
    }
    let scores = infer_scores(&model, &encoded.table);
    let confidence = scores_to_map(&labeling, &scores)?;
    Ok(SegmentOutput {
        labeling,
        table,
        encoded,
        prior,
        labels,
        model,
        scores,
        confidence,
    })
}

fn matrix_tensor(m: &DMatrix<f64>) -> Tensor {
    let values = m
        .row_iter()
        .flat_map(|r| r.iter().map(|&v| v as f32).collect::<Vec<_>>())
        .collect();
    Tensor::real32(vec![m.nrows(), m.ncols()], values).expect("extents match")
}

/// Writes the intermediate matrices of one run into `dir`.
///
/// Matrices are stored as real32 SFT; `labels.sft` is uint32 `H×W`.
pub fn dump_intermediates(
    out: &SegmentOutput,
    config: &RunConfig,
    dir: &Path,
) -> Result<(), Error> {
    fs::create_dir_all(dir)?;
    let aff = &out.encoded.affinities;
    for (name, m) in [
        ("M_s", &aff.semantic),
        ("M_a", &aff.apparent),
        ("M_s_norm", &aff.semantic_norm),
        ("M_a_norm", &aff.apparent_norm),
        ("E", &aff.edge),
        ("features", &out.encoded.table),
    ] {
        write_tensor(&matrix_tensor(m), dir.join(format!("{name}.sft")))?;
    }
    write_tensor(&out.labeling.to_tensor(), dir.join("labels.sft"))?;
    let mask = binarize(&out.confidence, config.binarize_threshold)?;
    atomic_write(&dir.join("pseudo_mask.pgm"), &mask.encode())?;
    let dump = serde_json::json!({
        "model": out.model,
        "config": config,
        "superpixels": out.labeling.count(),
        "pseudo_labels": {
            "foreground": out.labels.foreground.len(),
            "background": out.labels.background.len(),
        },
    });
    let text = serde_json::to_string_pretty(&dump).expect("plain values serialize");
    atomic_write(&dir.join("model.json"), text.as_bytes())?;
    Ok(())
}
