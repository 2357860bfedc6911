use thiserror::Error;

/// Errors produced by query evaluation, model fitting, sampling, and I/O.
#[derive(Debug, Error)]
pub enum Error {
    #[error("query id {qid} out of range (query set has {len} queries)")]
    QueryOutOfRange { qid: usize, len: usize },

    #[error("query {qid} already present in history")]
    DuplicateQuery { qid: usize },

    #[error("instance payload kind {found} incompatible with query set kind {expected}")]
    IncompatiblePayload {
        expected: &'static str,
        found: &'static str,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate history: no instance is consistent with it and smoothing is zero")]
    DegenerateHistory,

    #[error("class {class} has no instances")]
    EmptyClass { class: usize },

    #[error("malformed joint table: {0}")]
    MalformedTable(String),

    #[error("sampler diverged at iteration {iteration}: |z| = {norm:.3e} exceeds {bound:.3e}")]
    SamplerDiverged {
        iteration: usize,
        norm: f64,
        bound: f64,
    },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("model file format error: {0}")]
    ModelFormat(String),

    #[error("data format error: {0}")]
    DataFormat(String),

    #[error("size limit exceeded: {0}")]
    SizeLimit(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn data(msg: impl Into<String>) -> Self {
        Error::DataFormat(msg.into())
    }

    pub(crate) fn model(msg: impl Into<String>) -> Self {
        Error::ModelFormat(msg.into())
    }
}
