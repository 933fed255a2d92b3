use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A parameter lies outside the set where the operation is defined.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("quadrature did not reach relative tolerance {tol:e} (estimate {estimate:e}, error {error:e})")]
    QuadratureNonConvergence { tol: f64, estimate: f64, error: f64 },

    #[error("grid is empty: mesh width {h} too coarse for the domain")]
    EmptyGrid { h: f64 },

    #[error("fields live on different grids")]
    GridMismatch,

    #[error("iterative solver stopped after {iterations} iterations at relative residual {residual:e}")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("Green function evaluated at its pole")]
    Singularity,

    #[error("walk-on-spheres shell {shell} exceeds boundary distance {distance} at the start point")]
    ShellTooWide { shell: f64, distance: f64 },

    #[error("operation undefined for the zero field")]
    ZeroField,

    #[error("normalization mismatch: {0}")]
    NormalizationMismatch(String),

    #[error("expansion requires a common concentration scale, got distinct scales")]
    DistinctScales,

    #[error("concentration points {0} and {1} coincide")]
    CoincidentPoints(usize, usize),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("I/O error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures of an iterative or adaptive numeric procedure.
    pub fn is_numeric_failure(&self) -> bool {
        matches!(
            self,
            Error::QuadratureNonConvergence { .. } | Error::NonConvergence { .. }
        )
    }
}
