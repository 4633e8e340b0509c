use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid box: {0}")]
    InvalidBox(String),

    #[error("patient mismatch: `{left}` vs `{right}`")]
    PatientMismatch { left: String, right: String },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid proposal `{id}`: {reason}")]
    InvalidProposal { id: String, reason: String },

    #[error("empty batch")]
    EmptyBatch,

    #[error("head count mismatch: expected {expected}, found {found} (proposal `{id}`)")]
    HeadCountMismatch {
        id: String,
        expected: usize,
        found: usize,
    },

    #[error("unknown station `{0}`")]
    UnknownStation(String),

    #[error("invalid station grouping: {0}")]
    InvalidGrouping(String),

    #[error("no eligible ground-truth lesions; sensitivity is undefined")]
    NoEligibleLesions,

    #[error("{found} distinct patients seen but num_patients is {declared}")]
    TooManyPatients { declared: usize, found: usize },

    #[error("training diverged: {0}")]
    Training(String),
}
