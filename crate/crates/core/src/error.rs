use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Every domain failure the toolkit can report.
///
/// Variant names double as the stable error identifiers printed by the CLI,
/// see [`Error::name`].
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("missing expression cell for gene {gene} (code {code}, t={time}, rep {replicate})")]
    MissingCell {
        gene: String,
        code: u32,
        time: u32,
        replicate: u32,
    },
    #[error("base expression of gene {gene} is zero (code {code}, t={time}, rep {replicate})")]
    DivisionByZeroBase {
        gene: String,
        code: u32,
        time: u32,
        replicate: u32,
    },
    #[error("unknown {axis} {value}")]
    UnknownIndex { axis: &'static str, value: String },
    #[error("schema error: {0}")]
    Schema(String),
    #[error("invalid value: {0}")]
    Value(String),
    #[error("duplicate gene {0}")]
    DuplicateGene(String),
    #[error("sample {0} has zero total RPK")]
    EmptySample(String),
    #[error("series is constant, correlation undefined")]
    DegenerateSeries,
    #[error("need at least {needed} values, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("value {value} does not fit in {width} bits")]
    Overflow { value: u64, width: u32 },
    #[error("iteration guard exceeded for input {0}")]
    IterationLimit(u64),
    #[error("candidate list is empty")]
    EmptyCandidates,
    #[error("expression profile of gene {0} is constant")]
    DegenerateProfile(String),
    #[error("gene {0} is not in the network")]
    UnknownGene(String),
    #[error("perturbation set is empty")]
    EmptySet,
    #[error("output expression has zero variance across codes")]
    ZeroVariance,
    #[error("network has a single node")]
    SingletonNetwork,
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("fold factor must be positive, got {0}")]
    NonPositiveAlpha(f64),
    #[error("alpha(s) is non-positive at s = {0}")]
    AlphaNonPositiveOnGrid(f64),
    #[error("critical-level cubic has no positive real root")]
    NoPositiveRoot,
    #[error("closed-form constant A is zero")]
    DegenerateA,
    #[error("invalid benchmark spec: {0}")]
    Spec(String),
    #[error("io error: {0}")]
    Io(String),
}

impl Error {
    /// Stable identifier of the error kind.
    pub fn name(&self) -> &'static str {
        match self {
            Error::MissingCell { .. } => "MissingCell",
            Error::DivisionByZeroBase { .. } => "DivisionByZeroBase",
            Error::UnknownIndex { .. } => "UnknownIndex",
            Error::Schema(_) => "SchemaError",
            Error::Value(_) => "ValueError",
            Error::DuplicateGene(_) => "DuplicateGene",
            Error::EmptySample(_) => "EmptySample",
            Error::DegenerateSeries => "DegenerateSeries",
            Error::TooFewSamples { .. } => "TooFewSamples",
            Error::Overflow { .. } => "Overflow",
            Error::IterationLimit(_) => "IterationLimit",
            Error::EmptyCandidates => "EmptyCandidates",
            Error::DegenerateProfile(_) => "DegenerateProfile",
            Error::UnknownGene(_) => "UnknownGene",
            Error::EmptySet => "EmptySet",
            Error::ZeroVariance => "ZeroVariance",
            Error::SingletonNetwork => "SingletonNetwork",
            Error::LengthMismatch(..) => "LengthMismatch",
            Error::NonPositiveAlpha(_) => "NonPositiveAlpha",
            Error::AlphaNonPositiveOnGrid(_) => "AlphaNonPositiveOnGrid",
            Error::NoPositiveRoot => "NoPositiveRoot",
            Error::DegenerateA => "DegenerateA",
            Error::Spec(_) => "SpecError",
            Error::Io(_) => "IoError",
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Schema(e.to_string())
    }
}
