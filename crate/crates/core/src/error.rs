use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Validation(String),

    #[error("pole guard tripped at lambda = {lambda}: {what}")]
    PoleGuard { lambda: f64, what: String },

    #[error("singular vertex system at lambda = {lambda}")]
    Singular { lambda: f64 },

    #[error("boundary block ill-conditioned at lambda = {lambda} (cond ~ {cond:.3e})")]
    IllConditioned { lambda: f64, cond: f64 },

    #[error("recorded samples have no entry for lambda = {lambda:e} (missing: {missing:?})")]
    MissingLambda { lambda: f64, missing: Vec<f64> },

    #[error("found {found} of {wanted} eigenvalues in [{lo}, {hi}]")]
    SpectrumIncomplete { found: usize, wanted: usize, lo: f64, hi: f64 },

    #[error("no convergence: {0}")]
    NoConvergence(String),

    #[error("degenerate data: {0}")]
    Degenerate(String),

    #[error("coupling estimates at vertex {vertex} disagree (spread {spread:.3e})")]
    InconsistentCoupling { vertex: usize, spread: f64 },

    #[error("reconstruction stalled: {0}")]
    Stalled(String),

    #[error("outside tolerance: {0}")]
    Tolerance(String),

    #[error("{context}: {source}")]
    Step { context: String, source: Box<Error> },

    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),

    #[error("parse: {0}")]
    Parse(String),
}

impl Error {
    /// Failures tied to one spectral parameter; callers may move to another lambda.
    pub fn is_local_to_lambda(&self) -> bool {
        match self {
            Error::Step { source, .. } => source.is_local_to_lambda(),
            e => matches!(e, Error::PoleGuard { .. } | Error::Singular { .. } | Error::IllConditioned { .. }),
        }
    }

    /// Attach the reconstruction step that failed.
    pub fn in_step(self, context: impl Into<String>) -> Self {
        Error::Step { context: context.into(), source: Box::new(self) }
    }

    /// The error underneath any step context.
    pub fn root(&self) -> &Error {
        match self {
            Error::Step { source, .. } => source.root(),
            e => e,
        }
    }

    /// Process exit code used by the command line front end.
    pub fn exit_code(&self) -> i32 {
        match self.root() {
            Error::Validation(_) | Error::Io(_) | Error::Parse(_) | Error::MissingLambda { .. } => 2,
            _ => 3,
        }
    }
}
