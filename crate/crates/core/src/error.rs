use thiserror::Error;

/// Errors raised anywhere in the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("index {index} out of range (len {len})")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("invalid label prior: {0}")]
    InvalidPrior(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    /// The decision set is empty at the requested radius, so the dual is
    /// unbounded below.
    #[error("infeasible instance: radius {eps} is below the minimal feasible radius {min_radius}")]
    Infeasible { eps: f64, min_radius: f64 },

    /// The solver diverged (objective below the floor or a variable beyond
    /// its ceiling) without an exact infeasibility certificate.
    #[error("unbounded dual objective: {0}")]
    Unbounded(String),

    #[error("divergence: {0}")]
    Divergence(String),

    #[error("did not converge: {0}")]
    NonConvergence(String),

    #[error("missing column `{0}`")]
    MissingColumn(String),

    #[error("label column is not binary after mapping: found {0} distinct values")]
    NonBinaryLabel(usize),

    #[error("ragged row at line {line}: expected {expected} fields, found {found}")]
    RaggedRow {
        line: usize,
        expected: usize,
        found: usize,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for errors that mean "no feasible distribution" rather than a
    /// numerical or usage failure.
    pub fn is_infeasible(&self) -> bool {
        matches!(self, Error::Infeasible { .. } | Error::Unbounded(_))
    }

    pub(crate) fn check_dim(expected: usize, found: usize) -> Result<()> {
        if expected == found {
            Ok(())
        } else {
            Err(Error::DimensionMismatch { expected, found })
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
