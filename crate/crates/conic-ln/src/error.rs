use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parameter error: {0}")]
    Parameter(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("convergence failure: {message} (last residual {last_residual:.3e}, {} iterations)", history.len())]
    Convergence {
        message: String,
        last_residual: f64,
        history: Vec<f64>,
        last_iterate: Vec<f64>,
    },
    #[error("resolution error: {0}")]
    Resolution(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("rate error: fitted decay {fitted:.6} does not exceed required {required:.6}")]
    Rate { fitted: f64, required: f64 },
    #[error("precondition error: {0}")]
    Precondition(String),
    #[error("Fredholm obstruction at gamma = {gamma}: projection {projection:.3e} onto eigenmode {mode}")]
    FredholmObstruction { gamma: f64, mode: usize, projection: f64 },
    #[error("cutoff {cutoff} is below the requested rate {requested}; rebuild with a larger cutoff")]
    NeedsLargerCutoff { cutoff: f64, requested: f64 },
    #[error("domain error: {0}")]
    Domain(String),
    #[error("no contraction: {0}")]
    NonContraction(String),
    #[error("oracle failure: {0}")]
    Oracle(String),
    #[error("range error: {0}")]
    Range(String),
    #[error("diagnostic error: {0}")]
    Diagnostic(String),
    #[error("parse error at `{path}`: {message}")]
    Parse { path: String, message: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("{stage}: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn in_stage(self, stage: &str) -> Error {
        match self {
            Error::Stage { .. } => self,
            other => Error::Stage {
                stage: stage.to_string(),
                source: Box::new(other),
            },
        }
    }

    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            other => other,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self.root() {
            Error::Parse { .. } => 2,
            Error::Convergence { .. } | Error::NonContraction(_) => 4,
            Error::Oracle(_) => 5,
            _ => 3,
        }
    }
}
