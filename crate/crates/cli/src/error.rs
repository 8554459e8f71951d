use std::fmt;
use std::path::Path;

use possense::camera::io::CameraIoError;
use possense::camera::GeometryError;
use possense::coco::CocoError;
use possense::density::DensityError;
use possense::eval::EvalError;
use possense::mapping::{MappingError, StreamError};
use possense::sim::SimError;
use possense::taxonomy::TaxonomyError;

/// Error families, each with its own exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    /// Arguments, missing inputs, unwritable outputs, bad configuration files.
    Config,
    /// Input data that violates its schema.
    Data,
    /// Geometry or optimization failures.
    Numeric,
}

impl Family {
    pub fn exit_code(self) -> i32 {
        match self {
            Self::Config => 2,
            Self::Data => 3,
            Self::Numeric => 4,
        }
    }
}

#[derive(Debug)]
pub struct CliError {
    pub family: Family,
    pub message: String,
}

impl CliError {
    pub fn config(message: impl Into<String>) -> Self {
        Self {
            family: Family::Config,
            message: message.into(),
        }
    }

    pub fn data(message: impl Into<String>) -> Self {
        Self {
            family: Family::Data,
            message: message.into(),
        }
    }

    pub fn numeric(message: impl Into<String>) -> Self {
        Self {
            family: Family::Numeric,
            message: message.into(),
        }
    }

    /// Prefixes the message with the file it came from.
    pub fn in_file(mut self, path: &Path) -> Self {
        self.message = format!("{}: {}", path.display(), self.message);
        self
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

pub type CliResult<T> = Result<T, CliError>;

impl From<CocoError> for CliError {
    fn from(e: CocoError) -> Self {
        match e {
            CocoError::InvalidRatio(_) => Self::config(e.to_string()),
            _ => Self::data(e.to_string()),
        }
    }
}

impl From<GeometryError> for CliError {
    fn from(e: GeometryError) -> Self {
        Self::numeric(e.to_string())
    }
}

impl From<CameraIoError> for CliError {
    fn from(e: CameraIoError) -> Self {
        match e {
            CameraIoError::Geometry(g) => g.into(),
            _ => Self::data(e.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        Self::data(e.to_string())
    }
}

impl From<MappingError> for CliError {
    fn from(e: MappingError) -> Self {
        match e {
            MappingError::InvalidExtent(_) | MappingError::InvalidPrior { .. } | MappingError::NoPrior { .. } => Self::config(e.to_string()),
            MappingError::Geometry { .. } | MappingError::DegenerateVertical { .. } => Self::numeric(e.to_string()),
            _ => Self::data(e.to_string()),
        }
    }
}

impl From<StreamError> for CliError {
    fn from(e: StreamError) -> Self {
        Self::data(e.to_string())
    }
}

impl From<DensityError> for CliError {
    fn from(e: DensityError) -> Self {
        match e {
            DensityError::InvalidFps(_) | DensityError::InvalidBandwidth(_) | DensityError::InvalidCellSize(_) | DensityError::Extent(_) | DensityError::GridTooLarge(_) => {
                Self::config(e.to_string())
            }
            DensityError::Overflow => Self::numeric(e.to_string()),
            _ => Self::data(e.to_string()),
        }
    }
}

impl From<TaxonomyError> for CliError {
    fn from(e: TaxonomyError) -> Self {
        match e {
            TaxonomyError::UnknownClass { .. } => Self::data(e.to_string()),
            _ => Self::config(e.to_string()),
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Geometry(g) => g.into(),
            SimError::Camera(c) => c.into(),
            _ => Self::config(e.to_string()),
        }
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        Self::data(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        Self::data(e.to_string())
    }
}
