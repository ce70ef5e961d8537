use std::path::PathBuf;

use crate::attitude::Quaternion;

/// Errors raised by the estimation library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("quaternion scalar part {scalar} is at the MRP shadow singularity")]
    ShadowSingularity { scalar: f64 },

    #[error("inertia matrix is not invertible")]
    SingularInertia,

    #[error("TRIAD reference or observation vectors are collinear (|v1 x v2| = {cross_norm:e})")]
    CollinearVectors { cross_norm: f64 },

    #[error("innovation covariance is singular or ill-conditioned")]
    SingularInnovation,

    #[error("all hypothesis weights vanished; the filter bank diverged")]
    DegenerateWeights,

    /// The two largest eigenvalues of the fusion matrix coincide. `fallback` is the
    /// eigenvector closest to the previous estimate.
    #[error("quaternion average is ambiguous (top eigenvalues tie)")]
    DegenerateSpectrum { fallback: Quaternion },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("failed to read or write {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("CSV output failed: {0}")]
    Csv(#[from] csv::Error),

    #[error("plot rendering failed: {0}")]
    Plot(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
