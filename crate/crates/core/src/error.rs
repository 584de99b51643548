use thiserror::Error;

/// Errors raised by the filtering and identity-checking routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// A parameter value lies outside the domain of the family or operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// An observation lies outside the support of the observation law.
    #[error("observation {value} outside the support of the {family} family")]
    Support { family: &'static str, value: f64 },

    /// Invalid constructor or configuration input.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// The requested operation is not defined for this family or prior.
    #[error("unsupported operation: {0}")]
    Unsupported(String),

    /// The integrand carried no representable mass.
    #[error("quadrature underflow: {0}")]
    Underflow(String),

    /// A Gaussian predictive law put too much mass outside the parameter domain.
    #[error("truncated predictive mass {mass:.3e} exceeds {limit:.0e}")]
    Truncation { mass: f64, limit: f64 },

    /// A recursive run failed at a particular step (0-based).
    #[error("step {step}: {source}")]
    AtStep {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    /// Two algebraically equivalent computations disagreed.
    #[error("consistency check failed: {0}")]
    Consistency(String),
}

impl Error {
    pub(crate) fn at_step(step: usize, err: Error) -> Self {
        Error::AtStep {
            step,
            source: Box::new(err),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
