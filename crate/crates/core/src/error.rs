use thiserror::Error;

use crate::encoding::EncodingError;
use crate::evaluation::EvalError;
use crate::fusion::FusionError;
use crate::superpixel::SuperpixelError;
use crate::synth::SynthError;
use crate::tensor_io::{PnmError, TensorError};

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid input: {0}")]
    Input(String),
    #[error("{0}")]
    Match(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Pnm(#[from] PnmError),
    #[error(transparent)]
    Superpixel(#[from] SuperpixelError),
    #[error(transparent)]
    Encoding(#[from] EncodingError),
    #[error(transparent)]
    Fusion(#[from] FusionError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Stable machine-readable code for the `error: code=...` line.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Io(_)
            | Error::Tensor(TensorError::Io(_))
            | Error::Pnm(PnmError::Io(_))
            | Error::Synth(
                SynthError::Io(_)
                | SynthError::Tensor(TensorError::Io(_))
                | SynthError::Pnm(PnmError::Io(_)),
            ) => "E_IO",
            Error::Tensor(_) | Error::Pnm(_) | Error::Superpixel(SuperpixelError::Tensor(_)) => {
                "E_FORMAT"
            }
            Error::Config(_) => "E_CONFIG",
            Error::Match(_)
            | Error::Eval(EvalError::EmptyDataset | EvalError::DimensionMismatch { .. }) => {
                "E_MATCH"
            }
            Error::Input(_) => "E_INPUT",
            _ => "E_PIPELINE",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self.code() {
            "E_IO" => 2,
            "E_MATCH" => 3,
            "E_FORMAT" => 4,
            "E_CONFIG" | "E_INPUT" => 5,
            _ => 1,
        }
    }
}
