use std::path::PathBuf;

/// Errors raised by the damage-detection engine.
///
/// Variants carry enough context to be surfaced verbatim by the CLI and
/// the HTTP service.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("tiff error on {path}: {message}")]
    Tiff { path: PathBuf, message: String },
    #[error("unsupported raster {path}: {reason}")]
    UnsupportedRaster { path: PathBuf, reason: String },
    #[error("incompatible grids: {0}")]
    IncompatibleGrids(String),
    #[error("empty scene list")]
    EmptyStack,
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("invalid analysis window: {0}")]
    InvalidWindow(String),
    #[error("insufficient temporal samples: {0}")]
    InsufficientSamples(String),
    #[error("empty stratum list")]
    NoStrata,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),
    #[error("crs mismatch: {0} vs {1}")]
    CrsMismatch(String, String),
    #[error("prediction {0} has no ground-truth label")]
    MissingLabel(String),
    #[error("single-class input: {0}")]
    SingleClass(String),
    #[error("singular fit: {0}")]
    SingularFit(String),
    #[error("disjoint extents: {0}")]
    DisjointExtents(String),
    #[error("parse error in {context}: {message}")]
    Parse { context: String, message: String },
    #[error("{module}: {source}")]
    Module {
        module: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(context: impl Into<String>, message: impl ToString) -> Self {
        Error::Parse {
            context: context.into(),
            message: message.to_string(),
        }
    }

    /// Wraps an error with the name of the pipeline stage that raised it.
    pub fn in_module(self, module: &'static str) -> Self {
        Error::Module {
            module,
            source: Box::new(self),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
