use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite value at {context} index {index}")]
    NonFinite { context: String, index: String },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("incompatible parameter sets at `{name}`: {detail}")]
    Incompatible { name: String, detail: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("svd of `{name}` failed: {reason}")]
    SvdFailed { name: String, reason: String },

    #[error("token id {id} out of range for vocabulary of {vocab}")]
    TokenOutOfRange { id: u32, vocab: usize },

    #[error("sequence of length {len} exceeds context length {max}")]
    SequenceTooLong { len: usize, max: usize },

    #[error("batch has no supervised positions")]
    EmptyMask,

    #[error("empty batch")]
    EmptyBatch,

    #[error("training diverged at stage {stage}, step {step} (loss = {loss})")]
    Divergence { stage: usize, step: usize, loss: f64 },

    #[error("bad checkpoint magic: expected \"SPCL\", found {0:?}")]
    BadMagic([u8; 4]),

    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u32),

    #[error("overlapping tensor payloads: `{first}` and `{second}`")]
    OverlappingOffsets { first: String, second: String },

    #[error("truncated payload: {0}")]
    TruncatedPayload(String),

    #[error("corrupt checkpoint metadata: {0}")]
    Metadata(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
