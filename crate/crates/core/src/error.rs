use thiserror::Error;

/// Errors raised by the numerical routines of this crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("grid under-resolved: spacing {spacing} exceeds {limit} (need h <= delta/4)")]
    UnderResolved { spacing: f64, limit: f64 },

    #[error("unfolding cell size {delta} is below two grid spacings ({spacing})")]
    Resolution { delta: f64, spacing: f64 },

    #[error("unsupported spatial dimension {0}")]
    UnsupportedDimension(usize),

    #[error("interface is empty or degenerate")]
    DegenerateInterface,

    #[error("optimizer diverged after {iterations} iterations: {reason}")]
    Diverged { iterations: usize, reason: String, last_iterate: Vec<f64>, trace: Vec<f64> },

    #[error("constraint residual {residual:e} exceeds tolerance {tolerance:e}")]
    Infeasible { residual: f64, tolerance: f64 },

    #[error("profile ODE stalled at g = {g} (slope {slope:e})")]
    DegenerateProfile { g: f64, slope: f64 },

    #[error("invalid curve: {0}")]
    InvalidCurve(String),

    #[error("profile half-width {tau} is not below the domain half-width {half_width}")]
    ProfileTooWide { tau: f64, half_width: f64 },

    #[error("target mass is not reachable with |v| < tau/2 = {limit}")]
    MassUnreachable { limit: f64 },

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn ensure_finite(values: &[f64], what: &str) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("{what} contains non-finite values")))
    }
}
