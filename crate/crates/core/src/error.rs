use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("geometry error: {0}")]
    Geometry(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("meshing error: {0}")]
    Mesh(String),

    #[error("unsupported cell: {0}")]
    UnsupportedCell(String),

    #[error("degenerate element {element}: {reason}")]
    DegenerateElement { element: usize, reason: String },

    #[error("alignment error: {0}")]
    Alignment(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    /// Process exit code used by the command line tool.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. } => 4,
            Error::Numeric(_) | Error::Mesh(_) | Error::DegenerateElement { .. } => 3,
            Error::Validation(_)
            | Error::Geometry(_)
            | Error::Domain(_)
            | Error::UnsupportedCell(_)
            | Error::Alignment(_) => 2,
        }
    }

    /// Short machine-readable kind tag.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Validation(_) => "validation",
            Error::Geometry(_) => "geometry",
            Error::Domain(_) => "domain",
            Error::Numeric(_) => "numeric",
            Error::Mesh(_) => "mesh",
            Error::UnsupportedCell(_) => "unsupported_cell",
            Error::DegenerateElement { .. } => "degenerate_element",
            Error::Alignment(_) => "alignment",
        }
    }
}
