use thiserror::Error;

/// Errors shared across the library.
#[derive(Debug, Error)]
pub enum Error {
    /// An operation that requires a finite state received the `Infinity` marker.
    #[error("state is the absorbing Infinity marker")]
    InfiniteState,

    #[error("state has {got} coordinates, model has d = {expected}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// NaN or overflow produced before any stopping threshold was reached.
    /// Never silently converted into an explosion verdict.
    #[error("numerical failure at t = {t}: {detail}")]
    NumericalFailure { t: f64, detail: String },

    /// `lambda_crit` could not bracket the classification flip.
    #[error("no attraction/explosion bracket found within {doublings} doublings from lambda = 1")]
    BracketNotFound { doublings: u32 },

    /// Domain-G construction found no ray crossing the basin boundary.
    #[error("auxiliary-domain cap is empty: no ray crossing found")]
    CapEmpty,

    #[error("domain construction failed: {0}")]
    Construction(String),

    #[error("blow-up extrapolation requires u_d >= {required}, got {got}")]
    CertificateNotMet { required: f64, got: f64 },

    #[error("schema mismatch: {0}")]
    Schema(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
