//! Unsupervised foreground segmentation by fusing semantic and apparent cues.
//!
//! Given an RGB image plus three precomputed maps (a multi-channel semantic
//! response, a saliency map and an edge map), the pipeline
//!
//! 1. over-segments the image into SLIC superpixels,
//! 2. encodes each superpixel with unary and cross-context features,
//! 3. picks confident pseudo labels from the geometric-mean prior,
//! 4. fits per-image fusion weights by (balanced) weighted least squares,
//! 5. scores every superpixel and paints a per-pixel confidence map.
//!
//! [`evaluation`] implements the 256-threshold precision/recall protocol and
//! [`synth`] produces seeded scenes with known ground truth.

pub mod cli;
pub mod encoding;
mod error;
pub mod evaluation;
pub mod fusion;
pub mod pipeline;
pub mod superpixel;
pub mod synth;
pub mod tensor_io;

pub use error::Error;
pub use pipeline::{segment, RunConfig, SceneInputs, SegmentOutput};
