use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("matrix is not positive definite (failed at pivot {pivot})")]
    NotPositiveDefinite { pivot: usize },

    #[error("singular system: {0}")]
    Singular(String),

    #[error("forward recursion underflowed at t = {t}")]
    Underflow { t: usize },

    #[error("regime {regime} has effective sample {effective:.3} below the threshold {threshold}")]
    DegenerateRegime {
        regime: usize,
        effective: f64,
        threshold: f64,
    },

    #[error("initialization failed: {0}")]
    Initialization(String),

    #[error("EM iteration {iteration}: {source}")]
    Iteration {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn at_iteration(self, iteration: usize) -> Error {
        match self {
            e @ Error::Iteration { .. } => e,
            e => Error::Iteration {
                iteration,
                source: Box::new(e),
            },
        }
    }

    /// True for failures of the numerics rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::NotPositiveDefinite { .. }
            | Error::Singular(_)
            | Error::Underflow { .. }
            | Error::DegenerateRegime { .. } => true,
            Error::Iteration { source, .. } => source.is_numerical(),
            _ => false,
        }
    }
}
