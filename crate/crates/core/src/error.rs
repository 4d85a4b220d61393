use thiserror::Error;

/// Errors produced by the expansion library.
///
/// Variants fall into the same four families the CLI reports as exit codes:
/// input/schema problems, capability limits, and numeric failures.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid dimensions: {0}")]
    Dimension(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("order mismatch: expected {expected}, got {actual}")]
    OrderMismatch { expected: usize, actual: usize },

    #[error("invalid order {0}: {1}")]
    InvalidOrder(usize, String),

    #[error("integer overflow while building {table} at order {order}")]
    Overflow { table: &'static str, order: usize },

    #[error("unknown activation `{0}`")]
    UnknownActivation(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("mixed partial derivatives require a linear input-adjacent module: {0}")]
    MixedUnsupported(String),

    #[error("missing forward trace: {0}")]
    MissingTrace(String),

    #[error("region boundary at the expansion point: {0}")]
    RegionBoundary(String),

    #[error("convergence ratios undefined: first derivative is zero")]
    UndefinedRatio,

    #[error("derivatives diverged at order {order}: {detail}")]
    Divergent { order: usize, detail: String },

    #[error("module {index}: {message}")]
    Module {
        index: usize,
        message: String,
        category: ErrorCategory,
    },

    #[error("schema error at `{path}`: {message}")]
    Schema { path: String, message: String },

    #[error("unsupported schema version {found} (supported: {supported})")]
    SchemaVersion { found: u64, supported: u64 },

    #[error("duplicate polynomial term {0}")]
    DuplicateTerm(String),

    #[error("term {term} has degree {degree} above polynomial order {order}")]
    TermOrder {
        term: String,
        degree: usize,
        order: usize,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Coarse error family, used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Input,
    Capability,
    Numeric,
}

impl ErrorCategory {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorCategory::Input => 2,
            ErrorCategory::Capability => 3,
            ErrorCategory::Numeric => 4,
        }
    }
}

impl Error {
    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::Unsupported(_) | Error::MixedUnsupported(_) => ErrorCategory::Capability,
            Error::NonFinite(_)
            | Error::Divergent { .. }
            | Error::Overflow { .. }
            | Error::RegionBoundary(_)
            | Error::UndefinedRatio => ErrorCategory::Numeric,
            Error::Module { category, .. } => *category,
            _ => ErrorCategory::Input,
        }
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn module(index: usize, err: Error) -> Self {
        match err {
            Error::Module { .. } => err,
            other => Error::Module {
                index,
                message: other.to_string(),
                category: other.category(),
            },
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
