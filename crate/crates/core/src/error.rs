use std::path::PathBuf;

/// Errors raised across the library. Each variant's message starts with a
/// stable kebab-case code so callers and logs can match on it.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("empty-dataset: cannot compute statistics of a dataset with no records")]
    EmptyDataset,
    #[error("empty-request: requested record count must be positive")]
    EmptyRequest,
    #[error("schema-mismatch: {0}")]
    SchemaMismatch(String),
    #[error("invalid-schema: {0}")]
    InvalidSchema(String),
    #[error("invalid-record: record {index} component {attribute} = {value} outside [0, {cardinality})")]
    InvalidRecord {
        index: usize,
        attribute: usize,
        value: u32,
        cardinality: u32,
    },
    #[error("invalid-theta: {0}")]
    InvalidTheta(String),
    #[error("unmapped-value: row {row}, column {column:?}: raw value {raw:?} has no category mapping")]
    UnmappedValue {
        row: usize,
        column: String,
        raw: String,
    },
    #[error("invalid-workload: {0}")]
    InvalidWorkload(String),
    #[error(
        "domain-too-large: {cells} cells exceeds the explicit-basis cap of {cap}; \
         restrict the schema or use a sampled complement subspace"
    )]
    DomainTooLarge { cells: usize, cap: usize },
    #[error("probes-inside-phi: every probe statistic lies in the safe space")]
    ProbesInsidePhi,
    #[error("fingerprint-mismatch: expected {expected}, found {found}")]
    FingerprintMismatch { expected: String, found: String },
    #[error("inconsistent-targets: {0}")]
    InconsistentTargets(String),
    #[error("invalid-config: {0}")]
    InvalidConfig(String),
    #[error("phi-is-everything: the unsafe complement is zero-dimensional")]
    PhiIsEverything,
    #[error("degenerate-start: {0}; choose a different start or direction")]
    DegenerateStart(String),
    #[error("psi-mismatch: starting dataset does not reproduce the card's safe statistics (max deviation {0:e})")]
    PsiMismatch(f64),
    #[error("no-variation-signal: estimated coefficients are identically zero")]
    NoVariationSignal,
    #[error("no-interior-start: all {0} candidate directions hit the simplex boundary immediately")]
    NoInteriorStart(usize),
    #[error("no-support: {0}")]
    NoSupport(String),
    #[error("invalid-sample: {0}")]
    InvalidSample(String),
    #[error("blackbox-failed: {0}")]
    Blackbox(String),
    #[error("generator-failed: run {run}: {message}")]
    Generator { run: usize, message: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// The stable code prefix of the error message.
    pub fn code(&self) -> &'static str {
        match self {
            Error::EmptyDataset => "empty-dataset",
            Error::EmptyRequest => "empty-request",
            Error::SchemaMismatch(_) => "schema-mismatch",
            Error::InvalidSchema(_) => "invalid-schema",
            Error::InvalidRecord { .. } => "invalid-record",
            Error::InvalidTheta(_) => "invalid-theta",
            Error::UnmappedValue { .. } => "unmapped-value",
            Error::InvalidWorkload(_) => "invalid-workload",
            Error::DomainTooLarge { .. } => "domain-too-large",
            Error::ProbesInsidePhi => "probes-inside-phi",
            Error::FingerprintMismatch { .. } => "fingerprint-mismatch",
            Error::InconsistentTargets(_) => "inconsistent-targets",
            Error::InvalidConfig(_) => "invalid-config",
            Error::PhiIsEverything => "phi-is-everything",
            Error::DegenerateStart(_) => "degenerate-start",
            Error::PsiMismatch(_) => "psi-mismatch",
            Error::NoVariationSignal => "no-variation-signal",
            Error::NoInteriorStart(_) => "no-interior-start",
            Error::NoSupport(_) => "no-support",
            Error::InvalidSample(_) => "invalid-sample",
            Error::Blackbox(_) => "blackbox-failed",
            Error::Generator { .. } => "generator-failed",
            Error::Io { .. } => "io",
            Error::Csv(_) => "csv",
            Error::Json(_) => "json",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
