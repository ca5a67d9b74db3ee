use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse grouping of errors, used by front ends to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorFamily {
    Parse,
    Io,
    Domain,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("display pattern covers {extent_um:.1} um but the aperture needs {aperture_um:.1} um (enable periodic tiling to replicate the pattern)")]
    Coverage { extent_um: f64, aperture_um: f64 },

    #[error("degenerate kernel: {0}")]
    DegenerateKernel(String),

    #[error("rank error: {0}")]
    Rank(String),

    #[error("ill-conditioned deconvolution: {count} frequencies with |H| < 1e-12 and zero NSR")]
    IllConditioned { count: usize },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}: corrupt input: {message}", path.display())]
    Corrupt { path: PathBuf, message: String },

    #[error("{}: unsupported image: {message}", path.display())]
    Unsupported { path: PathBuf, message: String },

    #[error("{}:{line}: {message}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("external denoiser failed: {0}")]
    External(String),
}

impl Error {
    pub fn family(&self) -> ErrorFamily {
        match self {
            Error::Parse { .. } => ErrorFamily::Parse,
            Error::Io { .. } | Error::Corrupt { .. } | Error::Unsupported { .. } => ErrorFamily::Io,
            Error::External(_) => ErrorFamily::Io,
            _ => ErrorFamily::Domain,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
}
