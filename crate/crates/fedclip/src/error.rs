//! Error taxonomy for the whole crate.
//!
//! Every failure carries a stable kebab-case class name (the first token of
//! its `Display` output) so tests and callers can match on the class without
//! parsing free-form text.

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("empty-batch: at least one example is required")]
    EmptyBatch,

    #[error("empty-dataset: dataset has no examples")]
    EmptyDataset,

    #[error("invalid-spec: {0}")]
    InvalidSpec(String),

    #[error("invalid-clip-norm: clip norm must be positive, got {0}")]
    InvalidClipNorm(f64),

    #[error("unclipped-input: vector norm {norm} exceeds clip norm {clip_norm}")]
    UnclippedInput { norm: f64, clip_norm: f64 },

    #[error("invalid-sigma: noise multiplier must be nonnegative and finite, got {0}")]
    InvalidSigma(f64),

    #[error("probe-below-floor: lower probe {lower} is under the clip-norm floor {floor}")]
    ProbeBelowFloor { lower: f64, floor: f64 },

    #[error("unstable-step-size: step {step} outside (0, {limit}]")]
    UnstableStepSize { step: f64, limit: f64 },

    #[error("invalid-order: order must be > 1 and finite, got {0}")]
    InvalidOrder(f64),

    #[error("invalid-sampling-rate: rate must lie in (0, 1], got {0}")]
    InvalidSamplingRate(f64),

    #[error("no-orders: the order grid is empty")]
    NoOrders,

    #[error("no-steps: the ledger has recorded no steps")]
    NoSteps,

    #[error("uncalibratable: {0}")]
    Uncalibratable(String),

    #[error("empty-selection: no client selected after {0} redraws")]
    EmptySelection(u32),

    #[error("shape-mismatch: {0}")]
    ShapeMismatch(String),

    #[error("no-updates: nothing to aggregate")]
    NoUpdates,

    #[error("too-many-clients: {clients} clients for {examples} examples")]
    TooManyClients { clients: usize, examples: usize },

    #[error("bad-magic: expected 0x{expected:08x}, found 0x{found:08x}")]
    BadMagic { expected: u32, found: u32 },

    #[error("count-mismatch: {0}")]
    CountMismatch(String),

    #[error("truncated-file: {0}")]
    TruncatedFile(String),

    #[error("parse-error: {0}")]
    ParseError(String),

    #[error("validation-error({key}): {reason}")]
    Validation { key: String, reason: String },

    #[error("unmatched-budgets: {0}")]
    UnmatchedBudgets(String),

    #[error("numeric-failure: non-finite value produced at round {round}")]
    NumericFailure { round: u64 },

    #[error("io-error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Stable class name, the token before the first `:` or `(` in `Display`.
    pub fn class(&self) -> &'static str {
        match self {
            Error::EmptyBatch => "empty-batch",
            Error::EmptyDataset => "empty-dataset",
            Error::InvalidSpec(_) => "invalid-spec",
            Error::InvalidClipNorm(_) => "invalid-clip-norm",
            Error::UnclippedInput { .. } => "unclipped-input",
            Error::InvalidSigma(_) => "invalid-sigma",
            Error::ProbeBelowFloor { .. } => "probe-below-floor",
            Error::UnstableStepSize { .. } => "unstable-step-size",
            Error::InvalidOrder(_) => "invalid-order",
            Error::InvalidSamplingRate(_) => "invalid-sampling-rate",
            Error::NoOrders => "no-orders",
            Error::NoSteps => "no-steps",
            Error::Uncalibratable(_) => "uncalibratable",
            Error::EmptySelection(_) => "empty-selection",
            Error::ShapeMismatch(_) => "shape-mismatch",
            Error::NoUpdates => "no-updates",
            Error::TooManyClients { .. } => "too-many-clients",
            Error::BadMagic { .. } => "bad-magic",
            Error::CountMismatch(_) => "count-mismatch",
            Error::TruncatedFile(_) => "truncated-file",
            Error::ParseError(_) => "parse-error",
            Error::Validation { .. } => "validation-error",
            Error::UnmatchedBudgets(_) => "unmatched-budgets",
            Error::NumericFailure { .. } => "numeric-failure",
            Error::Io(_) => "io-error",
        }
    }

    /// Process exit code used by the CLI: 2 for I/O, 3 for numeric
    /// failures, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io(_) => 2,
            Error::NumericFailure { .. } => 3,
            _ => 1,
        }
    }
}
