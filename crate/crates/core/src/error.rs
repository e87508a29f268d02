use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the numerical kernels, the geometry helpers and the
/// experiment harness.
#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("symmetric eigensolver did not converge after {0} sweeps")]
    NoConvergence(usize),

    /// Two eigenvalues closer than the gap threshold; the analytic
    /// eigenvector gradient is undefined there.
    #[error("degenerate spectrum: eigenvalues {i} and {j} differ by {gap:e}")]
    DegenerateSpectrum { i: usize, j: usize, gap: f64 },

    #[error("need at least {need} correspondences, got {got}")]
    TooFewCorrespondences { need: usize, got: usize },

    #[error("degenerate scale: {0}")]
    DegenerateScale(&'static str),

    #[error("weights sum to {0:e}; weighted mean is undefined")]
    DegenerateMean(f64),

    #[error("rank-deficient matrix: {0}")]
    RankDeficient(&'static str),

    #[error("degenerate configuration: {0}")]
    DegenerateConfiguration(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("no forward cache for this network/instance pair")]
    MissingCache,

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
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

pub(crate) fn ensure_finite(values: &[f64], what: &'static str) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}
