use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("domain error in {op}: {detail}")]
    Domain { op: &'static str, detail: String },
    #[error("infeasible state: {0}")]
    Infeasible(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("feasibility violation ({constraint}): {detail}")]
    Feasibility {
        constraint: &'static str,
        detail: String,
    },
    #[error("unsupported feature: {0}")]
    Unsupported(String),
    #[error("malformed document: {0}")]
    Malformed(String),
    #[error("degenerate instance: {0}")]
    Degenerate(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("training diverged at step {step}: {detail}")]
    TrainingDiverged { step: usize, detail: String },
    #[error("adaptation diverged at iteration {iteration}: {detail}")]
    AdaptationDiverged { iteration: usize, detail: String },
    #[error("instance too large for exhaustive search: n = {n}, limit = {limit}")]
    SizeLimit { n: usize, limit: usize },
    #[error("join error: missing ids {0:?}")]
    Join(Vec<String>),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("instance {id}: {source}")]
    Instance {
        id: String,
        #[source]
        source: Box<Error>,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::Shape {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }

    /// Attach an instance identifier to an error raised while processing it.
    pub fn for_instance(self, id: impl Into<String>) -> Self {
        Error::Instance {
            id: id.into(),
            source: Box::new(self),
        }
    }
}
