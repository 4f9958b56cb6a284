use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("non-finite value in {what}")]
    NonFinite { what: String },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("{what} is not symmetric positive definite")]
    NotSpd { what: String },

    #[error("matrix {what} is numerically singular")]
    Singular { what: String },

    #[error("assumption {assumption} violated: {detail}")]
    AssumptionViolated {
        assumption: &'static str,
        detail: String,
    },

    #[error("particle {particle} produced a non-finite state")]
    ParticleBlowUp { particle: usize },

    #[error("simulation failed at step {step}: {source}")]
    Step {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("outer integrand does not decay beyond the truncation radius {radius}")]
    DivergentTail { radius: f64 },

    #[error("empirical measures have different sizes ({left} vs {right}); unbalanced transport is not supported")]
    UnequalSizes { left: usize, right: usize },

    #[error("brute-force enumeration limited to {max} points, got {n}")]
    TooLarge { n: usize, max: usize },

    #[error("zero nearest-neighbour radius at sample {index}; add a small jitter to break duplicate points")]
    ZeroRadius { index: usize },

    #[error("pair (A, B) is not controllable: rank {rank} < {required}")]
    NotControllable { rank: usize, required: usize },

    #[error("time {t} is below the validity threshold {threshold}")]
    OutOfRange { t: f64, threshold: f64 },

    #[error("unsupported: {0}")]
    Unsupported(String),
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    pub(crate) fn at_step(self, step: usize) -> Self {
        Error::Step {
            step,
            source: Box::new(self),
        }
    }
}

pub(crate) fn ensure_finite(what: &str, values: &[f64]) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite {
            what: what.to_string(),
        })
    }
}

pub(crate) fn ensure_dim(what: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            what,
            expected,
            found,
        })
    }
}
