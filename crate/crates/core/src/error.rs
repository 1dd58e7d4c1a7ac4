use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("p law is the point mass at 1/2 (P[rho = 1] must be < 1)")]
    RejectP1Half,
    #[error("cookie law has P[M = 0] = 0; at least some sites must be cookie-free")]
    RejectNoZeroCookies,
    #[error("E[rho^2] is infinite for this p law: {0}")]
    RejectMomentBlowup(String),
    #[error("malformed configuration: {0}")]
    MalformedConfig(String),
    #[error("argument out of domain: {0}")]
    OutOfDomain(String),
    #[error("regime mismatch: {0}")]
    RegimeMismatch(String),
    #[error("no convergence after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("only {found} confirmed regeneration(s); the walk is not transient enough for this horizon")]
    NotTransientEnough { found: usize },
    #[error("invalid regeneration gap: {0}")]
    InvalidGap(String),
    #[error("coupling requires M_1 = 0, found {0}")]
    CouplingPreconditionFailed(String),
    #[error("classify_rwre needs a cookie-free environment, but P[M = 0] = {0}")]
    NotCookieFree(f64),
    #[error("tilde reduction needs cookies supported on {{0, inf}}: {0}")]
    UnsupportedMLaw(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Stable machine-readable name of the error class.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::RejectP1Half => "RejectP1Half",
            Error::RejectNoZeroCookies => "RejectNoZeroCookies",
            Error::RejectMomentBlowup(_) => "RejectMomentBlowup",
            Error::MalformedConfig(_) => "MalformedConfig",
            Error::OutOfDomain(_) => "OutOfDomain",
            Error::RegimeMismatch(_) => "RegimeMismatch",
            Error::NoConvergence { .. } => "NoConvergence",
            Error::NotTransientEnough { .. } => "NotTransientEnough",
            Error::InvalidGap(_) => "InvalidGap",
            Error::CouplingPreconditionFailed(_) => "CouplingPreconditionFailed",
            Error::NotCookieFree(_) => "NotCookieFree",
            Error::UnsupportedMLaw(_) => "UnsupportedMLaw",
            Error::Io(_) => "Io",
            Error::Json(_) => "Json",
            Error::Csv(_) => "Csv",
        }
    }

    /// Process exit code for the CLI, grouped by error class.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::MalformedConfig(_) | Error::Json(_) => 2,
            Error::RejectP1Half | Error::RejectNoZeroCookies | Error::RejectMomentBlowup(_) => 3,
            Error::OutOfDomain(_)
            | Error::RegimeMismatch(_)
            | Error::NotCookieFree(_)
            | Error::UnsupportedMLaw(_)
            | Error::CouplingPreconditionFailed(_) => 4,
            Error::NoConvergence { .. } | Error::NotTransientEnough { .. } | Error::InvalidGap(_) => 5,
            Error::Io(_) | Error::Csv(_) => 6,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
