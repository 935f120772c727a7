use alloc::string::String;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("parameter out of range: {0}")]
    OutOfRange(String),
    #[error("duration {duration} ns is not an integer multiple of the segment length {tau} ns")]
    NonDivisibleDuration { duration: f64, tau: f64 },
    #[error("operator is not Hermitian (deviation {0:.3e})")]
    NonHermitianInput(f64),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("length mismatch: expected {expected}, found {found}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("gradient has an imaginary residue of {0:.3e}")]
    NonRealGradient(f64),
    #[error("insufficient tomography data: {0}")]
    InsufficientData(String),
    #[error("linear system is rank deficient: {0}")]
    RankDeficient(String),
    #[error("fit failed: {0}")]
    FitFailure(String),
    #[error("group closure failed: reached {0} elements")]
    ClosureFailure(usize),
    #[error("missing fit: {0}")]
    MissingFit(&'static str),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("experiment provider failed: {0}")]
    Provider(String),
}

pub(crate) fn ensure_finite(values: &[f64], what: &'static str) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}
