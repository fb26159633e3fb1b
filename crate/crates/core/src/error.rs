use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("non-finite entry in {0}")]
    NonFinite(&'static str),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("degenerate alignment: Procrustes matrix is (near-)singular")]
    DegenerateAlignment,

    #[error("Stiefel logarithm did not converge (residual {residual:.3e} after {iterations} iterations)")]
    LogFailure { residual: f64, iterations: usize },

    #[error("Cayley lift failed: sk(X^T Q) is singular (smallest singular value {sigma_min:.3e})")]
    LiftFailure { sigma_min: f64 },

    #[error("Cayley retraction failed: I - sΩ is singular")]
    RetractFailure,

    #[error("rank deficiency: effective rank {effective_rank} < {rank}")]
    RankDeficient { effective_rank: usize, rank: usize },

    #[error("toy geodesic leaves the domain: 1 + 2η/θ·t = {value:.3e} <= 0")]
    GeodesicDomain { value: f64 },

    #[error("merged predictor is zero; no representative exists on (R*)^2")]
    NoRepresentative,

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("invalid weights: {0}")]
    InvalidWeights(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("rank lift degenerate: {0}")]
    LiftDegenerate(String),

    #[error("layer sets differ: {0}")]
    LayerMismatch(String),

    #[error("Fréchet iteration did not converge on layers {}", .0.join(", "))]
    NotConverged(Vec<String>),

    #[error("I/O error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed manifest {path}: {message}")]
    Manifest { path: PathBuf, message: String },

    #[error("unsupported format_version {0}")]
    UnsupportedVersion(u32),

    #[error("shape mismatch for {file}: declared {declared:?} ({expected_bytes} bytes), found {found_bytes} bytes")]
    ShapeMismatch {
        file: PathBuf,
        declared: Vec<usize>,
        expected_bytes: usize,
        found_bytes: usize,
    },

    #[error("checksum mismatch for {file}: manifest {expected:08x}, file {found:08x}")]
    Checksum {
        file: PathBuf,
        expected: u32,
        found: u32,
    },
}

impl Error {
    /// Process exit status used by the command-line tool.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::LayerMismatch(_) => 2,
            Error::NotConverged(_) => 3,
            Error::LiftDegenerate(_) => 4,
            Error::Io { .. }
            | Error::Manifest { .. }
            | Error::UnsupportedVersion(_)
            | Error::ShapeMismatch { .. }
            | Error::Checksum { .. } => 5,
            _ => 1,
        }
    }

    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
