//! Error classification for exit codes: validation failures exit 2, I/O
//! failures exit 3.

use voxeldet::codec::CodecError;
use voxeldet::eval::EvalError;
use voxeldet::geometry::GeometryError;
use voxeldet::io::ParseError;
use voxeldet::losses::LossError;
use voxeldet::nms::NmsError;
use voxeldet::stub::StubError;
use voxeldet::voxel::GridError;

#[derive(Debug)]
pub enum CliError {
    Validation(anyhow::Error),
    Io(anyhow::Error),
}

pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_IO: i32 = 3;

impl CliError {
    pub fn validation(msg: impl Into<String>) -> Self {
        CliError::Validation(anyhow::anyhow!(msg.into()))
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => EXIT_VALIDATION,
            CliError::Io(_) => EXIT_IO,
        }
    }

    pub fn message(&self) -> String {
        match self {
            CliError::Validation(e) => format!("validation error: {e:#}"),
            CliError::Io(e) => format!("i/o error: {e:#}"),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.into())
    }
}

impl From<ParseError> for CliError {
    fn from(e: ParseError) -> Self {
        match e {
            ParseError::Io(io) => CliError::Io(io.into()),
            other => CliError::Validation(other.into()),
        }
    }
}

impl From<GridError> for CliError {
    fn from(e: GridError) -> Self {
        match e {
            GridError::Io(io) => CliError::Io(io.into()),
            other => CliError::Validation(other.into()),
        }
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Validation(e.into())
    }
}

macro_rules! validation_from {
    ($($ty:ty),*) => {
        $(impl From<$ty> for CliError {
            fn from(e: $ty) -> Self {
                CliError::Validation(e.into())
            }
        })*
    };
}

validation_from!(GeometryError, CodecError, LossError, NmsError, EvalError, StubError);
