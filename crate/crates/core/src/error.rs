use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Broad failure category, used by the command line to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Numeric,
    Internal,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("loss node must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("gradient check: function is non-finite when perturbing parameter `{param}` at entry {index}")]
    GradCheckNonFinite { param: String, index: usize },

    #[error("label {label} out of range for {num_classes} classes (line {line} of {file})")]
    LabelOutOfRange {
        label: i64,
        num_classes: usize,
        line: usize,
        file: String,
    },

    #[error("duplicate annotation for instance {instance}, annotator {annotator}")]
    DuplicateAnnotation { instance: usize, annotator: usize },

    #[error("training instance {0} has no annotations")]
    UnannotatedInstance(usize),

    #[error("ragged feature rows in {file}: line {line} has {found} columns, expected {expected}")]
    RaggedFeatures {
        file: String,
        line: usize,
        expected: usize,
        found: usize,
    },

    #[error("malformed data in {file}: {detail}")]
    Parse { file: String, detail: String },

    #[error("cannot remove {requested} annotations: at most {max_removable} are removable (max feasible fraction {max_fraction:.6})")]
    InfeasibleRemoval {
        requested: usize,
        max_removable: usize,
        max_fraction: f64,
    },

    #[error("training diverged: non-finite {what} at epoch {epoch}")]
    Divergence { what: String, epoch: usize },

    #[error("logging policy assigns probability {0} to a logged sample; must be > 0")]
    LoggingSupport(f64),

    #[error("LCA decoder is enabled but no co-occurrence adjacency was supplied")]
    MissingAdjacency,

    #[error("config error: {0}")]
    Config(String),

    #[error("unknown config key `{0}`")]
    UnknownConfigKey(String),

    #[error("unknown ablation variant `{0}`")]
    UnknownVariant(String),

    #[error("empty split: {0}")]
    EmptySplit(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(_) | Error::UnknownConfigKey(_) | Error::UnknownVariant(_) => {
                ErrorKind::Config
            }
            Error::LabelOutOfRange { .. }
            | Error::DuplicateAnnotation { .. }
            | Error::UnannotatedInstance(_)
            | Error::RaggedFeatures { .. }
            | Error::Parse { .. }
            | Error::InfeasibleRemoval { .. }
            | Error::EmptySplit(_)
            | Error::Checkpoint(_)
            | Error::Io { .. } => ErrorKind::Data,
            Error::NonFinite(_) | Error::Divergence { .. } | Error::GradCheckNonFinite { .. } => {
                ErrorKind::Numeric
            }
            _ => ErrorKind::Internal,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }
}
