//! File formats and dense feature maps.
//!
//! Tensors travel between tools as `SFT1` files, images as binary PNM.
//! [`FeatureMap`] is the in-memory `H×W×D` view the pipeline computes on.

mod pnm;
mod sft;

use std::fs;
use std::io::Write;
use std::path::Path;

pub use pnm::{
    decode_pnm, read_pgm, read_pnm, read_ppm, write_pgm, write_ppm, GrayImage, PnmError, PnmImage,
    RgbImage,
};
pub use sft::{read_tensor, write_tensor, DType, Tensor, TensorData, TensorError, MAGIC};

/// Writes `bytes` to a temporary file next to `path`, then renames it into place.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let file_name = path.file_name().ok_or_else(|| {
        std::io::Error::new(std::io::ErrorKind::InvalidInput, "path has no file name")
    })?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(file_name);
    tmp_name.push(format!(".{}.tmp", std::process::id()));
    let tmp = path.with_file_name(tmp_name);
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all().ok();
    }
    fs::rename(&tmp, path).inspect_err(|_| {
        let _ = fs::remove_file(&tmp);
    })
}

/// Dense `height × width × channels` map of reals, row-major with channels innermost.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl FeatureMap {
    pub fn new(
        height: usize,
        width: usize,
        channels: usize,
        data: Vec<f64>,
    ) -> Result<Self, TensorError> {
        let dims = vec![height, width, channels];
        if height == 0 || width == 0 || channels == 0 {
            return Err(TensorError::ZeroExtent(dims));
        }
        if height * width * channels != data.len() {
            return Err(TensorError::LengthMismatch {
                len: data.len(),
                dims,
            });
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(TensorError::NonFinite(pos));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Self {
        Self::new(
            height,
            width,
            channels,
            vec![value; height * width * channels],
        )
        .expect("valid extents")
    }

    /// Accepts a real32 tensor of shape `H×W` (one channel) or `H×W×D`.
    pub fn from_tensor(tensor: &Tensor) -> Result<Self, TensorError> {
        let values = tensor.as_real32()?;
        let (h, w, d) = match *tensor.dims() {
            [h, w] => (h, w, 1),
            [h, w, d] => (h, w, d),
            _ => {
                return Err(TensorError::WrongShape {
                    expected: "H×W or H×W×D",
                    found: tensor.dims().to_vec(),
                })
            }
        };
        Self::new(h, w, d, values.iter().map(|&v| v as f64).collect())
    }

    /// Real32 tensor; single-channel maps are written as `H×W`.
    pub fn to_tensor(&self) -> Tensor {
        let dims = if self.channels == 1 {
            vec![self.height, self.width]
        } else {
            vec![self.height, self.width, self.channels]
        };
        Tensor::real32(dims, self.data.iter().map(|&v| v as f32).collect())
            .expect("feature map values are finite")
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    /// All channel values of one pixel.
    pub fn pixel(&self, y: usize, x: usize) -> &[f64] {
        let start = (y * self.width + x) * self.channels;
        &self.data[start..start + self.channels]
    }

    /// Per-channel `(min, max)` over the whole map.
    pub fn channel_bounds(&self) -> Vec<(f64, f64)> {
        let mut bounds = vec![(f64::INFINITY, f64::NEG_INFINITY); self.channels];
        for px in self.data.chunks_exact(self.channels) {
            for (b, &v) in bounds.iter_mut().zip(px) {
                b.0 = b.0.min(v);
                b.1 = b.1.max(v);
            }
        }
        bounds
    }
}

/// Bilinear sample at fractional source coordinates, clamped to the map.
pub fn sample_bilinear(src: &FeatureMap, y: f64, x: f64, c: usize) -> f64 {
    let y = y.clamp(0.0, (src.height - 1) as f64);
    let x = x.clamp(0.0, (src.width - 1) as f64);
    let y0 = y.floor() as usize;
    let x0 = x.floor() as usize;
    let y1 = (y0 + 1).min(src.height - 1);
    let x1 = (x0 + 1).min(src.width - 1);
    let fy = y - y0 as f64;
    let fx = x - x0 as f64;

    let a = src.get(y0, x0, c);
    let b = src.get(y0, x1, c);
    let p = src.get(y1, x0, c);
    let q = src.get(y1, x1, c);
    let top = (1.0 - fx) * a + fx * b;
    let bottom = (1.0 - fx) * p + fx * q;
    let value = (1.0 - fy) * top + fy * bottom;
    let lo = a.min(b).min(p).min(q);
    let hi = a.max(b).max(p).max(q);
    value.clamp(lo, hi)
}

/// Align-corners bilinear resampling to `height × width`.
///
/// Output corner pixels coincide with input corner pixels; every output value
/// lies within the bounds of its channel in `src`.
pub fn resample_bilinear(
    src: &FeatureMap,
    height: usize,
    width: usize,
) -> Result<FeatureMap, TensorError> {
    if height == 0 || width == 0 {
        return Err(TensorError::ZeroExtent(vec![height, width, src.channels]));
    }
    let scale = |out: usize, inp: usize| {
        if out > 1 {
            (inp - 1) as f64 / (out - 1) as f64
        } else {
            0.0
        }
    };
    let sy = scale(height, src.height);
    let sx = scale(width, src.width);
    let mut data = Vec::with_capacity(height * width * src.channels);
    for y in 0..height {
        for x in 0..width {
            for c in 0..src.channels {
                data.push(sample_bilinear(src, y as f64 * sy, x as f64 * sx, c));
            }
        }
    }
    FeatureMap::new(height, width, src.channels, data)
}
