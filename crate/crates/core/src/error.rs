use thiserror::Error;

/// Errors raised anywhere in the library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid evidence: {0}")]
    InvalidEvidence(String),

    #[error("degenerate opinion: {0}")]
    DegenerateOpinion(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("total conflict between opinions (1 - C = {remaining:e})")]
    TotalConflict { remaining: f64 },

    #[error("total conflict for sample {sample_id}: 1 - C = {remaining:e}")]
    SampleConflict { sample_id: String, remaining: f64 },

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("training diverged at epoch {epoch}: {detail}")]
    Divergence { epoch: usize, detail: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("label error: {0}")]
    Label(String),

    #[error("undefined AUC: {0}")]
    UndefinedAuc(String),

    #[error("parse error in {file} at row {row}, column {column}: {detail}")]
    Parse {
        file: String,
        row: usize,
        column: usize,
        detail: String,
    },

    #[error("alignment error: {0}")]
    Alignment(String),

    #[error("stratification error: {0}")]
    Stratification(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl Error {
    /// Short class name used for one-line CLI diagnostics.
    pub fn class(&self) -> &'static str {
        match self {
            Error::InvalidEvidence(_) | Error::DegenerateOpinion(_) | Error::Domain(_) => "domain",
            Error::Dimension(_) => "dimension",
            Error::TotalConflict { .. } | Error::SampleConflict { .. } => "total-conflict",
            Error::EmptyInput(_) => "empty-input",
            Error::Divergence { .. } => "divergence",
            Error::Config(_) => "configuration",
            Error::Label(_) => "label",
            Error::UndefinedAuc(_) => "undefined-auc",
            Error::Parse { .. } => "parse",
            Error::Alignment(_) => "alignment",
            Error::Stratification(_) => "stratification",
            Error::Io(_) => "io",
        }
    }

    /// Process exit code for the CLI.
    pub fn exit_code(&self) -> u8 {
        match self.class() {
            "parse" => 3,
            "alignment" => 4,
            "divergence" => 5,
            "total-conflict" => 6,
            "configuration" => 7,
            "io" => 8,
            _ => 2,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
