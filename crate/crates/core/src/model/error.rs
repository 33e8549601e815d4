use std::path::PathBuf;

use crate::geometry::GeometryError;
use crate::numerics::NumericsError;

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("{name}: need at least 2 residues with complete N/CA/C, found {found}")]
    TooFewResidues { name: String, found: usize },
    #[error("{name}: {source}")]
    Geometry {
        name: String,
        #[source]
        source: GeometryError,
    },
    #[error("{0}")]
    Numerics(#[from] NumericsError),
    #[error("non-finite loss on protein `{protein}` at step {step}: {detail}")]
    NonFiniteLoss {
        protein: String,
        step: u64,
        detail: String,
    },
    #[error("training set is empty")]
    EmptyDataset,
    #[error("parameters do not match the config:\n{0}")]
    ParameterMismatch(String),
    #[error("checkpoint {}: {message}", path.display())]
    Checkpoint { path: PathBuf, message: String },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}
