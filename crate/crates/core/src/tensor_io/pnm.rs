//! Binary PNM: P5 (grayscale) and P6 (RGB), maxval 255 only.

use std::fs;
use std::path::Path;

use thiserror::Error;

use super::atomic_write;

#[derive(Debug, Error)]
pub enum PnmError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("unsupported PNM magic {0:?}, expected P5 or P6")]
    BadMagic([u8; 2]),
    #[error("malformed PNM header: {0}")]
    Header(&'static str),
    #[error("unsupported maxval {0}, only 255 is accepted")]
    Maxval(u32),
    #[error("truncated pixel data: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("expected a {expected} image, found {found}")]
    WrongKind {
        expected: &'static str,
        found: &'static str,
    },
    #[error("pixel buffer of {len} bytes does not match {width}x{height}x{channels}")]
    BufferSize {
        len: usize,
        width: usize,
        height: usize,
        channels: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    /// Interleaved RGB, row-major.
    pub data: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self, PnmError> {
        check_len(data.len(), width, height, 1)?;
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.data);
        out
    }
}

impl RgbImage {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self, PnmError> {
        check_len(data.len(), width, height, 3)?;
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = 3 * (y * self.width + x);
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.data);
        out
    }
}

fn check_len(len: usize, width: usize, height: usize, channels: usize) -> Result<(), PnmError> {
    if width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(channels))
        != Some(len)
    {
        return Err(PnmError::BufferSize {
            len,
            width,
            height,
            channels,
        });
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PnmImage {
    Gray(GrayImage),
    Rgb(RgbImage),
}

impl PnmImage {
    fn kind(&self) -> &'static str {
        match self {
            PnmImage::Gray(_) => "P5 grayscale",
            PnmImage::Rgb(_) => "P6 RGB",
        }
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn skip_whitespace_and_comments(&mut self) {
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b'#' => {
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                c if c.is_ascii_whitespace() => self.pos += 1,
                _ => break,
            }
        }
    }

    fn number(&mut self) -> Result<u32, PnmError> {
        self.skip_whitespace_and_comments();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(PnmError::Header("expected a decimal number"));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .expect("ascii digits")
            .parse()
            .map_err(|_| PnmError::Header("number out of range"))
    }
}

pub fn decode_pnm(bytes: &[u8]) -> Result<PnmImage, PnmError> {
    if bytes.len() < 2 {
        return Err(PnmError::Header("file shorter than the magic number"));
    }
    let magic = [bytes[0], bytes[1]];
    let channels = match &magic {
        b"P5" => 1,
        b"P6" => 3,
        _ => return Err(PnmError::BadMagic(magic)),
    };
    let mut cur = Cursor { bytes, pos: 2 };
    let width = cur.number()? as usize;
    let height = cur.number()? as usize;
    let maxval = cur.number()?;
    if width == 0 || height == 0 {
        return Err(PnmError::Header("zero image extent"));
    }
    if maxval != 255 {
        return Err(PnmError::Maxval(maxval));
    }
    // exactly one whitespace byte separates the header from the raster
    match bytes.get(cur.pos) {
        Some(c) if c.is_ascii_whitespace() => cur.pos += 1,
        _ => return Err(PnmError::Header("missing whitespace after maxval")),
    }
    let expected = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(channels))
        .ok_or(PnmError::Header("image extent overflow"))?;
    let raster = &bytes[cur.pos..];
    if raster.len() < expected {
        return Err(PnmError::Truncated {
            expected,
            found: raster.len(),
        });
    }
    let data = raster[..expected].to_vec();
    Ok(if channels == 1 {
        PnmImage::Gray(GrayImage {
            width,
            height,
            data,
        })
    } else {
        PnmImage::Rgb(RgbImage {
            width,
            height,
            data,
        })
    })
}

pub fn read_pnm(path: impl AsRef<Path>) -> Result<PnmImage, PnmError> {
    decode_pnm(&fs::read(path)?)
}

pub fn read_pgm(path: impl AsRef<Path>) -> Result<GrayImage, PnmError> {
    match read_pnm(path)? {
        PnmImage::Gray(g) => Ok(g),
        other => Err(PnmError::WrongKind {
            expected: "P5 grayscale",
            found: other.kind(),
        }),
    }
}

/// Reads a P6 file; P5 input is promoted to RGB by replicating the gray channel.
pub fn read_ppm(path: impl AsRef<Path>) -> Result<RgbImage, PnmError> {
    match read_pnm(path)? {
        PnmImage::Rgb(img) => Ok(img),
        PnmImage::Gray(g) => Ok(RgbImage {
            width: g.width,
            height: g.height,
            data: g.data.iter().flat_map(|&v| [v, v, v]).collect(),
        }),
    }
}

pub fn write_pgm(image: &GrayImage, path: impl AsRef<Path>) -> Result<(), PnmError> {
    atomic_write(path.as_ref(), &image.encode())?;
    Ok(())
}

pub fn write_ppm(image: &RgbImage, path: impl AsRef<Path>) -> Result<(), PnmError> {
    atomic_write(path.as_ref(), &image.encode())?;
    Ok(())
}
