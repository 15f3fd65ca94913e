use thiserror::Error;

/// Errors surfaced by the rough-path laboratory.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error(
        "Chen's relation violated: residual {residual:.3e} at triple (s={s}, u={u}, t={t}), tolerance {tolerance:.1e}"
    )]
    ChenViolation {
        residual: f64,
        s: usize,
        u: usize,
        t: usize,
        tolerance: f64,
    },

    #[error("covariance matrix not positive definite at pivot {pivot}: diagonal {diagonal:.3e} (jitter {jitter:.1e} already applied)")]
    NotPositiveDefinite {
        pivot: usize,
        diagonal: f64,
        jitter: f64,
    },

    #[error("rejection sampler acceptance rate {rate:.3} below minimum {minimum:.3} after {proposals} proposals")]
    LowAcceptanceRate {
        rate: f64,
        minimum: f64,
        proposals: usize,
    },

    #[error("renormalisation clock level {level} unreachable: G2 tops out at {maximum}")]
    ClockUnreachable { level: f64, maximum: f64 },

    #[error("Monte-Carlo run failed: {failures} of {total} paths errored (limit {limit})")]
    TooManyPathFailures {
        failures: usize,
        total: usize,
        limit: usize,
    },

    #[error("non-positive price {price} at asset {asset}, grid index {index}")]
    NonPositivePrice {
        price: f64,
        asset: usize,
        index: usize,
    },

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("i/o failure: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
