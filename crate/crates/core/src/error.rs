use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("site {site_id} has only one treatment arm")]
    SingleArm { site_id: u32 },
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("treatment values must be -1 or +1, found {value} in site {site_id} row {row}")]
    InvalidTreatment { site_id: u32, row: usize, value: f64 },
    #[error("duplicate site id {0}")]
    DuplicateSite(u32),
    #[error("no sites supplied")]
    NoSites,
    #[error("index {index} out of range (limit {limit})")]
    IndexOutOfRange { index: usize, limit: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("degenerate data: {0}")]
    DegenerateData(String),
    #[error("feature {0} has zero curvature in every site")]
    ZeroCurvature(usize),
    #[error("arm {arm} is empty")]
    EmptyArm { arm: i8 },
    #[error("fold {fold} training complement lacks an arm")]
    FoldSingleArm { fold: usize },
    #[error("need at least {needed} observations, got {got}")]
    TooFewObservations { needed: usize, got: usize },
    #[error("unknown {kind} '{name}' (available: {available})")]
    UnknownStrategy {
        kind: &'static str,
        name: String,
        available: String,
    },
    #[error("privacy contract violated: {0}")]
    PrivacyViolation(String),
    #[error("missing potential outcomes in test draw")]
    MissingPotentialOutcomes,
    #[error("malformed input: {0}")]
    Format(String),
    #[error("linear algebra failure: {0}")]
    Numerical(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}
