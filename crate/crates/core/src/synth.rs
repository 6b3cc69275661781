//! Seeded synthetic scenes with known ground truth.
//!
//! A scene is 1–3 ellipse/rectangle foreground blobs over a cluttered
//! background, plus stand-ins for the three precomputed feature maps:
//!
//! * semantic (`H×W×D`): a few channels respond inside the foreground and
//!   fall off quadratically over a halo band; the remaining channels carry
//!   low-frequency clutter, and one of them may fire on a background object.
//! * saliency (`H×W`): the box-blurred mask with low-frequency dropouts inside
//!   the object, a salient background distractor, and pixel noise.
//! * edge (`H×W`): the mask boundary dilated by one pixel, weaker edges around
//!   background clutter, and salt noise.
//!
//! Every corruption is scaled by `noise`; at `noise = 0` the maps are clean.
//! All randomness comes from a seeded ChaCha8 stream and the arithmetic on the
//! random path is limited to `+ − × ÷` and comparisons, so scenes are
//! reproducible bit for bit.

use std::collections::VecDeque;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::encoding::normalize_semantic;
use crate::fusion::ConfidenceMap;
use crate::tensor_io::{
    resample_bilinear, write_pgm, write_ppm, write_tensor, FeatureMap, GrayImage, PnmError,
    RgbImage, TensorError,
};

pub const MANIFEST_HEADER: &str = "stem,seed,height,width,channels,noise,fg_fraction";

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("scene must be at least 32x32, got {height}x{width}")]
    TooSmall { height: usize, width: usize },
    #[error("need at least 2 semantic channels, got {0}")]
    TooFewChannels(usize),
    #[error("noise must lie in [0, 1), got {0}")]
    Noise(f64),
    #[error("foreground fraction range [{0}, {1}] is invalid")]
    FractionRange(f64, f64),
    #[error("no layout with foreground fraction in range after {0} attempts")]
    Rejected(usize),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Pnm(#[from] PnmError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthParams {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub noise: f64,
    /// Accepted range of the foreground area fraction.
    pub fg_fraction: (f64, f64),
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            height: 96,
            width: 96,
            channels: 8,
            noise: 0.25,
            fg_fraction: (0.05, 0.6),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthScene {
    pub seed: u64,
    pub image: RgbImage,
    /// Row-major foreground mask.
    pub gt: Vec<bool>,
    pub semantic: FeatureMap,
    pub saliency: FeatureMap,
    pub edge: FeatureMap,
    pub params: SynthParams,
}

impl SynthScene {
    pub fn height(&self) -> usize {
        self.params.height
    }

    pub fn width(&self) -> usize {
        self.params.width
    }

    pub fn fg_fraction(&self) -> f64 {
        self.gt.iter().filter(|&&g| g).count() as f64 / self.gt.len() as f64
    }

    pub fn gt_image(&self) -> GrayImage {
        GrayImage::new(
            self.width(),
            self.height(),
            self.gt.iter().map(|&g| if g { 255 } else { 0 }).collect(),
        )
        .expect("matching extents")
    }
}

#[derive(Debug, Clone, Copy)]
enum Shape {
    Ellipse { cx: f64, cy: f64, rx: f64, ry: f64 },
    Rect { x0: f64, y0: f64, x1: f64, y1: f64 },
}

impl Shape {
    fn random(rng: &mut ChaCha8Rng, h: usize, w: usize, scale: (f64, f64)) -> Self {
        let m = h.min(w) as f64;
        let rx = m * rng.random_range(scale.0..scale.1);
        let ry = m * rng.random_range(scale.0..scale.1);
        let cx = rng.random_range(rx * 0.6..(w as f64 - rx * 0.6).max(rx * 0.6 + 1.0));
        let cy = rng.random_range(ry * 0.6..(h as f64 - ry * 0.6).max(ry * 0.6 + 1.0));
        if rng.random_bool(0.5) {
            Shape::Ellipse { cx, cy, rx, ry }
        } else {
            Shape::Rect {
                x0: cx - rx,
                y0: cy - ry,
                x1: cx + rx,
                y1: cy + ry,
            }
        }
    }

    fn contains(&self, x: usize, y: usize) -> bool {
        let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
        match *self {
            Shape::Ellipse { cx, cy, rx, ry } => {
                let dx = (px - cx) / rx;
                let dy = (py - cy) / ry;
                dx * dx + dy * dy <= 1.0
            }
            Shape::Rect { x0, y0, x1, y1 } => px >= x0 && px <= x1 && py >= y0 && py <= y1,
        }
    }

    fn rasterize(&self, h: usize, w: usize) -> Vec<bool> {
        (0..h * w).map(|p| self.contains(p % w, p / w)).collect()
    }
}

/// 4-neighbour (city-block) distance from every pixel to the nearest `true` pixel.
fn distance_to(mask: &[bool], h: usize, w: usize) -> Vec<usize> {
    let mut dist = vec![usize::MAX; h * w];
    let mut queue = VecDeque::new();
    for (p, &m) in mask.iter().enumerate() {
        if m {
            dist[p] = 0;
            queue.push_back(p);
        }
    }
    while let Some(p) = queue.pop_front() {
        let (x, y) = (p % w, p / w);
        let next = [
            (x > 0).then(|| p - 1),
            (x + 1 < w).then(|| p + 1),
            (y > 0).then(|| p - w),
            (y + 1 < h).then(|| p + w),
        ];
        for q in next.into_iter().flatten() {
            if dist[q] == usize::MAX {
                dist[q] = dist[p] + 1;
                queue.push_back(q);
            }
        }
    }
    dist
}

/// Pixels of `mask` with a 4-neighbour outside it, dilated by one pixel.
fn boundary_band(mask: &[bool], h: usize, w: usize) -> Vec<bool> {
    let inside = distance_to(mask, h, w);
    let outside = distance_to(&mask.iter().map(|m| !m).collect::<Vec<_>>(), h, w);
    (0..h * w)
        .map(|p| inside[p] <= 1 && outside[p] <= 2 && (inside[p] + outside[p]) >= 1)
        .collect()
}

/// Mean over a `(2r+1)²` window clipped to the image.
fn box_blur(values: &[f64], h: usize, w: usize, r: usize) -> Vec<f64> {
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let (y0, y1) = (y.saturating_sub(r), (y + r).min(h - 1));
            let (x0, x1) = (x.saturating_sub(r), (x + r).min(w - 1));
            let mut sum = 0.0;
            for yy in y0..=y1 {
                for xx in x0..=x1 {
                    sum += values[yy * w + xx];
                }
            }
            out[y * w + x] = sum / ((y1 - y0 + 1) * (x1 - x0 + 1)) as f64;
        }
    }
    out
}

/// Smooth random field in `[0, 1]`: a coarse grid of uniforms, bilinearly upsampled.
fn smooth_field(rng: &mut ChaCha8Rng, h: usize, w: usize, cells: usize) -> Vec<f64> {
    let coarse: Vec<f64> = (0..cells * cells).map(|_| rng.random()).collect();
    let coarse = FeatureMap::new(cells, cells, 1, coarse).expect("finite");
    resample_bilinear(&coarse, h, w)
        .expect("nonzero extent")
        .data()
        .to_vec()
}

fn random_color(rng: &mut ChaCha8Rng) -> [f64; 3] {
    [
        rng.random_range(0.0..255.0),
        rng.random_range(0.0..255.0),
        rng.random_range(0.0..255.0),
    ]
}

fn color_gap(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

/// A colour at least `gap` (L1 over RGB) away from every colour in `avoid`.
fn distinct_color(rng: &mut ChaCha8Rng, avoid: &[[f64; 3]], gap: f64) -> [f64; 3] {
    for _ in 0..64 {
        let c = random_color(rng);
        if avoid.iter().all(|a| color_gap(&c, a) >= gap) {
            return c;
        }
    }
    random_color(rng)
}

const MAX_LAYOUT_ATTEMPTS: usize = 1000;
const HALO_FRACTION: f64 = 0.12;
const BLUR_RADIUS: usize = 3;

pub fn generate(seed: u64, params: &SynthParams) -> Result<SynthScene, SynthError> {
    let SynthParams {
        height: h,
        width: w,
        channels: d,
        noise,
        fg_fraction: (lo, hi),
    } = *params;
    if h < 32 || w < 32 {
        return Err(SynthError::TooSmall {
            height: h,
            width: w,
        });
    }
    if d < 2 {
        return Err(SynthError::TooFewChannels(d));
    }
    if !(0.0..1.0).contains(&noise) {
        return Err(SynthError::Noise(noise));
    }
    if !(0.0 < lo && lo < hi && hi < 1.0) {
        return Err(SynthError::FractionRange(lo, hi));
    }
    let n = h * w;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // foreground layout, resampled until the area fraction is in range
    let mut gt = Vec::new();
    let mut shapes = Vec::new();
    for attempt in 0.. {
        if attempt == MAX_LAYOUT_ATTEMPTS {
            return Err(SynthError::Rejected(attempt));
        }
        let blobs = rng.random_range(1..=3);
        let upper = if hi < 0.2 { 0.22 } else { 0.36 };
        shapes = (0..blobs)
            .map(|_| Shape::random(&mut rng, h, w, (0.1, upper)))
            .collect();
        gt = vec![false; n];
        for s in &shapes {
            for (g, inside) in gt.iter_mut().zip(s.rasterize(h, w)) {
                *g |= inside;
            }
        }
        let frac = gt.iter().filter(|&&g| g).count() as f64 / n as f64;
        if frac >= lo && frac <= hi {
            break;
        }
    }
    let dist_out = distance_to(&gt, h, w);

    // background clutter objects, kept clear of the foreground
    let mut clutter = vec![false; n];
    let mut clutter_masks = Vec::new();
    for _ in 0..rng.random_range(1..=3) {
        let s = Shape::random(&mut rng, h, w, (0.06, 0.14));
        let mask: Vec<bool> = s
            .rasterize(h, w)
            .iter()
            .zip(&dist_out)
            .map(|(&m, &dd)| m && dd > 3)
            .collect();
        if mask.iter().any(|&m| m) {
            for (c, &m) in clutter.iter_mut().zip(&mask) {
                *c |= m;
            }
            clutter_masks.push(mask);
        }
    }

    // image
    let bg_color = random_color(&mut rng);
    let fg_colors: Vec<[f64; 3]> = shapes
        .iter()
        .map(|_| distinct_color(&mut rng, &[bg_color], 150.0))
        .collect();
    let clutter_colors: Vec<[f64; 3]> = clutter_masks
        .iter()
        .map(|_| distinct_color(&mut rng, &[bg_color], 90.0))
        .collect();
    let shading = smooth_field(&mut rng, h, w, 4);
    let mut data = Vec::with_capacity(3 * n);
    for p in 0..n {
        let (x, y) = (p % w, p / w);
        let mut c = bg_color;
        for (m, col) in clutter_masks.iter().zip(&clutter_colors) {
            if m[p] {
                c = *col;
            }
        }
        for (s, col) in shapes.iter().zip(&fg_colors) {
            if s.contains(x, y) {
                c = *col;
            }
        }
        let shade = 1.0 + 0.3 * noise * (shading[p] - 0.5);
        for v in c {
            let jitter = 80.0 * noise * (rng.random::<f64>() - 0.5);
            data.push((v * shade + jitter).clamp(0.0, 255.0) as u8);
        }
    }
    let image = RgbImage::new(w, h, data).expect("3 bytes per pixel");

    // semantic
    let responding = rng.random_range(1..=(d / 4).max(1));
    let mut order: Vec<usize> = (0..d).collect();
    for i in (1..d).rev() {
        order.swap(i, rng.random_range(0..=i));
    }
    let halo = (HALO_FRACTION * h.min(w) as f64).max(1.0);
    let distractor =
        (rng.random::<f64>() < 0.7 && !clutter_masks.is_empty()).then(|| order[responding]);
    let clutter_dist = distance_to(&clutter, h, w);
    let mut semantic = vec![0.0; n * d];
    for (rank, &c) in order.iter().enumerate() {
        let field = smooth_field(&mut rng, h, w, 6);
        if rank < responding {
            let peak = 1.0 - noise * rng.random::<f64>();
            let dropout = smooth_field(&mut rng, h, w, 3);
            for p in 0..n {
                let t = (1.0 - dist_out[p] as f64 / halo).max(0.0);
                let core = if gt[p] {
                    1.0 - 0.6 * noise * dropout[p]
                } else {
                    t * t
                };
                let v = peak * core + 0.5 * noise * field[p] * rng.random::<f64>();
                semantic[p * d + c] = v.clamp(0.0, 1.0);
            }
        } else {
            let amp = if distractor == Some(c) {
                noise * rng.random_range(2.0..3.2)
            } else {
                0.0
            };
            for p in 0..n {
                let t = (1.0 - clutter_dist[p] as f64 / halo).max(0.0);
                let v = amp * t * t + 0.6 * noise * field[p] * rng.random::<f64>();
                semantic[p * d + c] = v.clamp(0.0, 1.0);
            }
        }
    }

    // saliency
    let gt_f: Vec<f64> = gt.iter().map(|&g| f64::from(u8::from(g))).collect();
    let blurred = box_blur(&gt_f, h, w, BLUR_RADIUS);
    let clutter_f: Vec<f64> = clutter.iter().map(|&c| f64::from(u8::from(c))).collect();
    let clutter_blur = box_blur(&clutter_f, h, w, BLUR_RADIUS);
    let false_salience = noise * rng.random_range(2.0..3.6);
    let weak = smooth_field(&mut rng, h, w, 3);
    let mut saliency = Vec::with_capacity(n);
    for p in 0..n {
        let dropout = 1.0 - 2.0 * noise * weak[p];
        let v = blurred[p] * dropout
            + false_salience * clutter_blur[p]
            + 0.5 * noise * rng.random::<f64>();
        saliency.push(v.clamp(0.0, 1.0));
    }

    // edges
    let band = boundary_band(&gt, h, w);
    let clutter_band = boundary_band(&clutter, h, w);
    let mut edge = Vec::with_capacity(n);
    for p in 0..n {
        let mut v = 0.0;
        if band[p] {
            v = 1.0 - noise * rng.random::<f64>();
        } else if clutter_band[p] {
            v = 0.7 * (1.0 - noise * rng.random::<f64>());
        }
        if rng.random::<f64>() < 0.03 * noise {
            v = v.max(rng.random());
        }
        edge.push(v);
    }

    Ok(SynthScene {
        seed,
        image,
        gt,
        semantic: FeatureMap::new(h, w, d, semantic)?,
        saliency: FeatureMap::new(h, w, 1, saliency)?,
        edge: FeatureMap::new(h, w, 1, edge)?,
        params: *params,
    })
}

/// Single-cue baselines scored directly at pixel level.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaselineMode {
    /// Per-pixel maximum over the min-max normalized semantic channels.
    SemanticOnly,
    /// The saliency map itself.
    SaliencyOnly,
}

pub fn baseline_scores(scene: &SynthScene, mode: BaselineMode) -> ConfidenceMap {
    baseline_from_maps(&scene.semantic, &scene.saliency, mode)
}

pub fn baseline_from_maps(
    semantic: &FeatureMap,
    saliency: &FeatureMap,
    mode: BaselineMode,
) -> ConfidenceMap {
    let (h, w) = match mode {
        BaselineMode::SemanticOnly => (semantic.height(), semantic.width()),
        BaselineMode::SaliencyOnly => (saliency.height(), saliency.width()),
    };
    let data = match mode {
        BaselineMode::SemanticOnly => {
            let norm = normalize_semantic(semantic);
            norm.data()
                .chunks_exact(norm.channels())
                .map(|px| px.iter().copied().fold(0.0, f64::max))
                .collect()
        }
        BaselineMode::SaliencyOnly => saliency.data().iter().map(|v| v.clamp(0.0, 1.0)).collect(),
    };
    ConfidenceMap::new(h, w, data).expect("values clamped to [0, 1]")
}

/// Writes `image.ppm`, `gt.pgm`, `semantic.sft`, `saliency.sft` and `edge.sft` into `dir`.
pub fn write_scene(scene: &SynthScene, dir: &Path) -> Result<(), SynthError> {
    fs::create_dir_all(dir)?;
    write_ppm(&scene.image, dir.join("image.ppm"))?;
    write_pgm(&scene.gt_image(), dir.join("gt.pgm"))?;
    write_tensor(&scene.semantic.to_tensor(), dir.join("semantic.sft"))?;
    write_tensor(&scene.saliency.to_tensor(), dir.join("saliency.sft"))?;
    write_tensor(&scene.edge.to_tensor(), dir.join("edge.sft"))?;
    Ok(())
}

/// One `index.csv` row (without trailing newline) under [`MANIFEST_HEADER`].
pub fn manifest_row(stem: &str, scene: &SynthScene) -> String {
    let p = &scene.params;
    format!(
        "{stem},{},{},{},{},{},{}",
        scene.seed,
        p.height,
        p.width,
        p.channels,
        p.noise,
        scene.fg_fraction()
    )
}

/// Directory name used for the scene generated from `seed`.
pub fn scene_stem(seed: u64) -> String {
    format!("scene_{seed:06}")
}
