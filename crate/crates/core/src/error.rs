use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at row {row}, column `{column}`: {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("formula error: {0}")]
    Formula(String),

    #[error("missing value for subject {row} in required column `{column}`")]
    MissingValue { row: usize, column: String },

    #[error("singular design; collinear columns: {}", columns.join(", "))]
    SingularDesign { columns: Vec<String> },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("complete or quasi-complete separation (|coefficient {index}| = {value:.3e})")]
    Separation { index: usize, value: f64 },

    #[error("no convergence after {iterations} iterations (residual {residual:.3e})")]
    NonConvergence { iterations: usize, residual: f64, last: Vec<f64> },

    #[error("level `{0}` has no training rows")]
    EmptyLevel(String),

    #[error("covariance matrix is not positive semi-definite")]
    NonPsdCovariance,

    #[error("Cox model needs at least one event")]
    NoEvents,

    #[error("monotone partial likelihood: coefficients diverge")]
    MonotoneLikelihood,

    #[error("covariate `{0}` is constant; the Cox model has no intercept")]
    ConstantCovariate(String),

    #[error("estimated survival is zero at horizon {horizon}; weight is infinite")]
    InfiniteWeight { horizon: f64 },

    #[error("horizon {horizon} lies outside the observed time range [0, {max_time}]")]
    HorizonOutOfRange { horizon: f64, max_time: f64 },

    #[error("selection probability is not positive for subject {row}")]
    NonPositiveProbability { row: usize },

    #[error("degenerate data: {0}")]
    Degenerate(String),

    #[error("invalid modularization: {0}")]
    Spec(String),

    #[error("imputation {imputation}, mechanism {mechanism} (`{name}`): {source}")]
    Engine {
        imputation: usize,
        mechanism: usize,
        name: String,
        #[source]
        source: Box<Error>,
    },

    #[error("no rows enter the analysis model")]
    NoAnalysisRows,

    #[error("{failed} of {total} bootstrap replicates failed (more than 5%); delta may be too extreme. first failure: {first}")]
    TooManyFailures {
        failed: usize,
        total: usize,
        first: String,
    },

    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Strip engine annotations down to the numerical cause.
    pub fn root(&self) -> &Error {
        match self {
            Error::Engine { source, .. } => source.root(),
            other => other,
        }
    }

    /// True for failures that come from the data or the numerics rather than
    /// from a malformed configuration.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self.root(),
            Error::SingularDesign { .. }
                | Error::Separation { .. }
                | Error::NonConvergence { .. }
                | Error::EmptyLevel(_)
                | Error::NonPsdCovariance
                | Error::NoEvents
                | Error::MonotoneLikelihood
                | Error::InfiniteWeight { .. }
                | Error::NonPositiveProbability { .. }
                | Error::Degenerate(_)
                | Error::NoAnalysisRows
                | Error::TooManyFailures { .. }
        )
    }
}
