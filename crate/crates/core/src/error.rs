use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("non-finite entry in {0}")]
    NonFinite(&'static str),

    #[error("singular pencil: eigenvalues {0} and {1} violate the spectrum condition")]
    SingularPencil(String, String),

    #[error("matrix is not positive semidefinite: eigenvalue {0:e}")]
    NotPsd(f64),

    #[error("definiteness error: {0}")]
    Definiteness(String),

    #[error("unstable system (spectral abscissa {0:e}); use time-limited Gramians instead")]
    Stability(f64),

    #[error("rank {requested} exceeds the usable numerical rank {usable}")]
    Rank { requested: usize, usable: usize },

    #[error("degenerate system: {0}")]
    Degenerate(String),

    #[error("no convergence: {0}")]
    NonConvergence(String),

    #[error("residual {residual:e} exceeds bound {bound:e} in {what}")]
    Residual {
        what: &'static str,
        residual: f64,
        bound: f64,
    },

    #[error("{path}:{line}: {msg}")]
    Format {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for errors caused by invalid user input rather than numerics.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::Config(_)
                | Error::Format { .. }
                | Error::Stability(_)
                | Error::Dimension(_)
                | Error::Rank { .. }
                | Error::Io(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
