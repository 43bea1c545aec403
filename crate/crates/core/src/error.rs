use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A formula would divide by zero (zero detuning, zero coupling, ...).
    #[error("singularity: {0}")]
    Singular(String),

    #[error(
        "dispersive approximation invalid: |detuning| = {detuning:.6e} rad/s must exceed 10 g sqrt(N) = {limit:.6e} rad/s"
    )]
    DispersiveValidity { detuning: f64, limit: f64 },

    /// A named parameter failed validation.
    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParameter { field: String, reason: String },

    /// Time grid too coarse for the cavity response.
    #[error("accuracy error: {0}")]
    Accuracy(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    /// Analytic precision formula used outside its regime of validity.
    #[error("validity error: {0}")]
    Validity(String),

    #[error("configuration error: {0}")]
    Config(String),

    /// MCP signal ratio outside the physical band; carries the clipped estimate.
    #[error("signal ratio {s_r} outside [{lower}, {upper}] (clipped estimate {clipped})")]
    OutOfRange {
        s_r: f64,
        lower: f64,
        upper: f64,
        clipped: f64,
    },

    #[error("rank-deficient Jacobian: {0}")]
    RankDeficient(String),

    #[error("unidentifiable parameters: {0}")]
    Unidentifiable(String),

    #[error("data schema error: {0}")]
    Schema(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            field: field.into(),
            reason: reason.into(),
        }
    }
}
