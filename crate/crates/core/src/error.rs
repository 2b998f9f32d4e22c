use thiserror::Error;

/// Errors raised by the structured meta-learning engine and its tooling.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch at {node}: expected {expected:?}, got {got:?}")]
    Shape {
        node: String,
        expected: Vec<usize>,
        got: Vec<usize>,
    },

    #[error("invalid graph state: {0}")]
    State(String),

    #[error("capability error: {0}")]
    Capability(String),

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("architecture error: {0}")]
    Spec(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("split error: {0}")]
    Split(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("divergence at iteration {iter}, task {task}: loss {loss}")]
    Divergence { iter: usize, task: usize, loss: f64 },

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Wraps the error with a location string such as `"iter 3, task 7"`.
    pub fn context(self, ctx: impl Into<String>) -> Self {
        Error::Context {
            context: ctx.into(),
            source: Box::new(self),
        }
    }

    /// Innermost error, skipping any context layers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Context { source, .. } => source.root(),
            other => other,
        }
    }

    pub fn is_numerical(&self) -> bool {
        matches!(self.root(), Error::Numerical(_) | Error::Divergence { .. })
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn shape_err(node: impl Into<String>, expected: &[usize], got: &[usize]) -> Error {
    Error::Shape {
        node: node.into(),
        expected: expected.to_vec(),
        got: got.to_vec(),
    }
}
