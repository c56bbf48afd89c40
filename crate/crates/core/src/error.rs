use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: invalid manifest: {message}")]
    Manifest { path: PathBuf, message: String },

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("dimension mismatch in {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: String,
        expected: usize,
        found: usize,
    },

    #[error("non-finite value in {matrix} matrix at entity {entity}")]
    NonFinite { matrix: String, entity: usize },

    #[error("asymmetric adjacency: edge ({u}, {v}) has no reverse")]
    AsymmetricAdjacency { u: usize, v: usize },

    #[error("invalid edge ({u}, {v}) in {path}: {message}")]
    InvalidEdge {
        path: PathBuf,
        u: usize,
        v: usize,
        message: String,
    },

    #[error("row {row} of {matrix} has zero norm")]
    ZeroNormRow { matrix: String, row: usize },

    #[error("row {row} is not unit-norm (norm {norm})")]
    NonUnitRow { row: usize, norm: f64 },

    #[error("infeasible degree profile: mean degree {mean_degree} with {n_entities} entities")]
    InfeasibleDegree { mean_degree: f64, n_entities: usize },

    #[error("cannot form {k} clusters from {points} points")]
    TooFewPoints { k: usize, points: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{stage}: {source}")]
    Stage {
        stage: String,
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

    pub(crate) fn in_stage(self, stage: &str) -> Self {
        Error::Stage {
            stage: stage.to_string(),
            source: Box::new(self),
        }
    }

    /// True for errors caused by a bad configuration rather than bad data.
    pub fn is_config(&self) -> bool {
        match self {
            Error::Config(_) | Error::InfeasibleDegree { .. } => true,
            Error::Stage { source, .. } => source.is_config(),
            _ => false,
        }
    }
}
