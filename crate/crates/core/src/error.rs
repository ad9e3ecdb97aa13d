use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, FunnelError>;

#[derive(Debug, Error)]
pub enum FunnelError {
    #[error("dimension error in {op}: {lhs:?} vs {rhs:?}")]
    Dimension {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("layout parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("bad magic: expected FTNT")]
    BadMagic,

    #[error("unsupported archive version {0}")]
    UnsupportedVersion(u32),

    #[error("corrupt header: {0}")]
    CorruptHeader(String),

    #[error("truncated payload in tensor {0}")]
    TruncatedPayload(String),

    #[error("shape mismatch for tensor {name}: expected {expected:?}, found {found:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("missing tensor {0}")]
    MissingTensor(String),

    #[error("unexpected tensor {0}")]
    UnexpectedTensor(String),

    #[error("duplicate tensor name {0}")]
    DuplicateName(String),

    #[error("training diverged at step {step}: loss {loss}")]
    Diverged { step: usize, loss: f64 },
}

impl FunnelError {
    /// Short, stable, machine-parseable category name.
    pub fn category(&self) -> &'static str {
        match self {
            FunnelError::Dimension { .. } => "dimension",
            FunnelError::Numeric(_) => "numeric",
            FunnelError::Contract(_) => "contract",
            FunnelError::Parse { .. } => "parse",
            FunnelError::Validation(_) => "validation",
            FunnelError::Config(_) => "config",
            FunnelError::Io { .. } => "io",
            FunnelError::BadMagic
            | FunnelError::UnsupportedVersion(_)
            | FunnelError::CorruptHeader(_)
            | FunnelError::TruncatedPayload(_)
            | FunnelError::DuplicateName(_) => "checkpoint",
            FunnelError::ShapeMismatch { .. }
            | FunnelError::MissingTensor(_)
            | FunnelError::UnexpectedTensor(_) => "shape",
            FunnelError::Diverged { .. } => "diverged",
        }
    }

    /// The message without the generic prefix that `Display` adds to the
    /// free-text variants, for output that already shows the category.
    pub fn detail(&self) -> String {
        match self {
            FunnelError::Numeric(m)
            | FunnelError::Contract(m)
            | FunnelError::Validation(m)
            | FunnelError::Config(m) => m.clone(),
            _ => self.to_string(),
        }
    }

    pub(crate) fn dim(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        FunnelError::Dimension {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        FunnelError::Io {
            path: path.into(),
            source,
        }
    }
}
