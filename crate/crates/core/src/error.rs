use thiserror::Error;

/// Errors raised by path sampling, flow integration and the experiment harness.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("config error at `{field}`: {message}")]
    Config { field: String, message: String },

    /// An exponential moment of the Levy measure is infinite.
    #[error("exponential moment diverges: A = {exponent} is at or beyond the critical exponent {critical} of the jump law")]
    MomentDivergence { exponent: f64, critical: f64 },

    /// The fictitious-time ODE left the ball of radius `threshold`.
    #[error("flow diverged at fictitious time u = {at:.6} (|state| = {norm:e} > {threshold:e})")]
    FlowDivergence { at: f64, norm: f64, threshold: f64 },

    /// Flow divergence inside a time-stepping scheme, tagged with the knot index.
    #[error("scheme diverged while advancing knot {knot}: {source}")]
    SchemeDivergence {
        knot: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("event-driven reference requires a zero diffusion coefficient")]
    NonzeroDiffusion,

    #[error("{diverged} of {total} paths hit the divergence guard (limit 1%)")]
    DivergenceAbort { diverged: usize, total: usize },

    #[error("rate fit needs at least 3 points above the floor, found {0}")]
    TooFewPoints(usize),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    /// True when the error originates from the flow divergence guard.
    pub fn is_divergence(&self) -> bool {
        matches!(
            self,
            Error::FlowDivergence { .. } | Error::SchemeDivergence { .. }
        )
    }
}
