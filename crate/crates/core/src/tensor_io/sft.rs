//! The `SFT1` tensor container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! offset  size      field
//! 0       4         magic "SFT1"
//! 4       1         dtype code (0 = real32, 1 = uint8, 2 = uint32)
//! 5       1         ndim (1..=3)
//! 6       4*ndim    extents, uint32 each
//! ...     payload   row-major elements
//! ```

use std::fs;
use std::path::Path;

use thiserror::Error;

use super::atomic_write;

pub const MAGIC: [u8; 4] = *b"SFT1";
pub const MAX_RANK: usize = 3;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad magic {0:?}, expected \"SFT1\"")]
    BadMagic([u8; 4]),
    #[error("unknown dtype code {0}")]
    UnknownDtype(u8),
    #[error("unsupported rank {0}, expected 1 to {MAX_RANK} axes")]
    BadRank(usize),
    #[error("zero extent in dims {0:?}")]
    ZeroExtent(Vec<usize>),
    #[error("dims {0:?} overflow the addressable element count")]
    DimOverflow(Vec<usize>),
    #[error("truncated file: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("{0} trailing bytes after payload")]
    TrailingBytes(usize),
    #[error("non-finite real32 value at element {0}")]
    NonFinite(usize),
    #[error("data length {len} does not match dims {dims:?}")]
    LengthMismatch { len: usize, dims: Vec<usize> },
    #[error("expected {expected} tensor, found {found}")]
    WrongDtype { expected: DType, found: DType },
    #[error("expected a tensor of shape {expected}, found dims {found:?}")]
    WrongShape {
        expected: &'static str,
        found: Vec<usize>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DType {
    Real32,
    Uint8,
    Uint32,
}

impl DType {
    pub fn code(self) -> u8 {
        match self {
            DType::Real32 => 0,
            DType::Uint8 => 1,
            DType::Uint32 => 2,
        }
    }

    pub fn from_code(code: u8) -> Result<Self, TensorError> {
        match code {
            0 => Ok(DType::Real32),
            1 => Ok(DType::Uint8),
            2 => Ok(DType::Uint32),
            other => Err(TensorError::UnknownDtype(other)),
        }
    }

    pub fn size_of(self) -> usize {
        match self {
            DType::Real32 | DType::Uint32 => 4,
            DType::Uint8 => 1,
        }
    }
}

impl std::fmt::Display for DType {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            DType::Real32 => "real32",
            DType::Uint8 => "uint8",
            DType::Uint32 => "uint32",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    Real32(Vec<f32>),
    Uint8(Vec<u8>),
    Uint32(Vec<u32>),
}

impl TensorData {
    pub fn len(&self) -> usize {
        match self {
            TensorData::Real32(v) => v.len(),
            TensorData::Uint8(v) => v.len(),
            TensorData::Uint32(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dtype(&self) -> DType {
        match self {
            TensorData::Real32(_) => DType::Real32,
            TensorData::Uint8(_) => DType::Uint8,
            TensorData::Uint32(_) => DType::Uint32,
        }
    }
}

/// A dense row-major array with one to three axes.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    dims: Vec<usize>,
    data: TensorData,
}

impl Tensor {
    pub fn new(dims: Vec<usize>, data: TensorData) -> Result<Self, TensorError> {
        let count = element_count(&dims)?;
        if count != data.len() {
            return Err(TensorError::LengthMismatch {
                len: data.len(),
                dims,
            });
        }
        if let TensorData::Real32(values) = &data {
            if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
                return Err(TensorError::NonFinite(pos));
            }
        }
        Ok(Self { dims, data })
    }

    pub fn real32(dims: Vec<usize>, values: Vec<f32>) -> Result<Self, TensorError> {
        Self::new(dims, TensorData::Real32(values))
    }

    pub fn uint8(dims: Vec<usize>, values: Vec<u8>) -> Result<Self, TensorError> {
        Self::new(dims, TensorData::Uint8(values))
    }

    pub fn uint32(dims: Vec<usize>, values: Vec<u32>) -> Result<Self, TensorError> {
        Self::new(dims, TensorData::Uint32(values))
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn data(&self) -> &TensorData {
        &self.data
    }

    pub fn into_data(self) -> TensorData {
        self.data
    }

    pub fn dtype(&self) -> DType {
        self.data.dtype()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_real32(&self) -> Result<&[f32], TensorError> {
        match &self.data {
            TensorData::Real32(v) => Ok(v),
            other => Err(TensorError::WrongDtype {
                expected: DType::Real32,
                found: other.dtype(),
            }),
        }
    }

    pub fn as_uint32(&self) -> Result<&[u32], TensorError> {
        match &self.data {
            TensorData::Uint32(v) => Ok(v),
            other => Err(TensorError::WrongDtype {
                expected: DType::Uint32,
                found: other.dtype(),
            }),
        }
    }

    /// Serializes into the `SFT1` byte layout.
    pub fn encode(&self) -> Vec<u8> {
        let header_len = 6 + 4 * self.dims.len();
        let mut out = Vec::with_capacity(header_len + self.len() * self.dtype().size_of());
        out.extend_from_slice(&MAGIC);
        out.push(self.dtype().code());
        out.push(self.dims.len() as u8);
        for &d in &self.dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        match &self.data {
            TensorData::Real32(v) => v
                .iter()
                .for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            TensorData::Uint8(v) => out.extend_from_slice(v),
            TensorData::Uint32(v) => v
                .iter()
                .for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, TensorError> {
        let need = |expected: usize| {
            if bytes.len() < expected {
                Err(TensorError::Truncated {
                    expected,
                    found: bytes.len(),
                })
            } else {
                Ok(())
            }
        };

        need(4)?;
        let magic: [u8; 4] = bytes[..4].try_into().expect("length checked");
        if magic != MAGIC {
            return Err(TensorError::BadMagic(magic));
        }
        need(6)?;
        let dtype = DType::from_code(bytes[4])?;
        let ndim = bytes[5] as usize;
        if ndim == 0 || ndim > MAX_RANK {
            return Err(TensorError::BadRank(ndim));
        }
        let header_len = 6 + 4 * ndim;
        need(header_len)?;
        let dims: Vec<usize> = bytes[6..header_len]
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().expect("chunk of 4")) as usize)
            .collect();
        let count = element_count(&dims)?;
        let payload_len = count
            .checked_mul(dtype.size_of())
            .and_then(|n| n.checked_add(header_len))
            .ok_or_else(|| TensorError::DimOverflow(dims.clone()))?;
        need(payload_len)?;
        if bytes.len() > payload_len {
            return Err(TensorError::TrailingBytes(bytes.len() - payload_len));
        }

        let payload = &bytes[header_len..payload_len];
        let data = match dtype {
            DType::Real32 => TensorData::Real32(
                payload
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().expect("chunk of 4")))
                    .collect(),
            ),
            DType::Uint8 => TensorData::Uint8(payload.to_vec()),
            DType::Uint32 => TensorData::Uint32(
                payload
                    .chunks_exact(4)
                    .map(|c| u32::from_le_bytes(c.try_into().expect("chunk of 4")))
                    .collect(),
            ),
        };
        Tensor::new(dims, data)
    }
}

fn element_count(dims: &[usize]) -> Result<usize, TensorError> {
    if dims.is_empty() || dims.len() > MAX_RANK {
        return Err(TensorError::BadRank(dims.len()));
    }
    if dims.contains(&0) {
        return Err(TensorError::ZeroExtent(dims.to_vec()));
    }
    if dims.iter().any(|&d| d > u32::MAX as usize) {
        return Err(TensorError::DimOverflow(dims.to_vec()));
    }
    dims.iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| TensorError::DimOverflow(dims.to_vec()))
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<Tensor, TensorError> {
    let bytes = fs::read(path)?;
    Tensor::decode(&bytes)
}

/// Writes `tensor` to `path` through a temporary sibling file and a rename.
pub fn write_tensor(tensor: &Tensor, path: impl AsRef<Path>) -> Result<(), TensorError> {
    atomic_write(path.as_ref(), &tensor.encode())?;
    Ok(())
}
