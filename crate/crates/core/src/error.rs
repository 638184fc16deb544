use alloc::string::String;

/// Errors raised anywhere in the core pipeline.
///
/// [`Error::code`] gives a stable machine-readable tag used in error reports.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("non-finite value produced by `{op}`")]
    NonFinite { op: &'static str },

    #[error("shape mismatch in `{op}`: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("backward needs a 1x1 loss, got {rows}x{cols}")]
    NonScalarLoss { rows: usize, cols: usize },

    #[error("graph already carries reverse edges")]
    AlreadyReversed,

    #[error("graph has no company nodes")]
    EmptyGraph,

    #[error("company has no phase I award")]
    NotAnAwardee,

    #[error("metric `{0}` is undefined for this input")]
    UndefinedMetric(&'static str),

    #[error("k = {k} exceeds the number of scored items ({n})")]
    KExceedsN { k: usize, n: usize },

    #[error("base positive rate is zero")]
    ZeroBaseRate,

    #[error("batch norm needs at least two rows in train mode")]
    DegenerateBatchNorm,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("parameter `{0}` not found")]
    MissingParam(String),

    #[error("training diverged (non-finite loss) at epoch {epoch}")]
    Diverged { epoch: usize },

    #[error("{0}")]
    Invalid(String),
}

impl Error {
    pub fn code(&self) -> &'static str {
        match self {
            Error::NonFinite { .. } => "non_finite",
            Error::Shape { .. } => "shape_mismatch",
            Error::NonScalarLoss { .. } => "non_scalar_loss",
            Error::AlreadyReversed => "already_reversed",
            Error::EmptyGraph => "empty_graph",
            Error::NotAnAwardee => "not_an_awardee",
            Error::UndefinedMetric(_) => "undefined_metric",
            Error::KExceedsN { .. } => "k_exceeds_n",
            Error::ZeroBaseRate => "zero_base_rate",
            Error::DegenerateBatchNorm => "degenerate_batchnorm",
            Error::Config(_) => "invalid_config",
            Error::MissingParam(_) => "missing_param",
            Error::Diverged { .. } => "diverged",
            Error::Invalid(_) => "invalid_input",
        }
    }
}

pub type Result<T> = core::result::Result<T, Error>;
