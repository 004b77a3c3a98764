use thiserror::Error;

/// Errors raised while reading or validating a search space.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpaceError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("hyperparameter `{name}`: {message}")]
    Invalid { name: String, message: String },
    #[error("unknown hyperparameter `{0}`")]
    UnknownHyperparameter(String),
}

impl SpaceError {
    pub(crate) fn invalid(name: impl Into<String>, message: impl Into<String>) -> Self {
        SpaceError::Invalid {
            name: name.into(),
            message: message.into(),
        }
    }
}

/// A single field-level diagnostic on an interaction document.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct FieldError {
    /// Path to the offending field, e.g. `[2].intervention.Resolution`.
    pub field: String,
    pub message: String,
}

/// All diagnostics collected while parsing an interaction document.
#[derive(Debug, Error, Clone, PartialEq)]
#[error("{} invalid field(s): {}", .0.len(), summarize(.0))]
pub struct KnowledgeError(pub Vec<FieldError>);

fn summarize(errors: &[FieldError]) -> String {
    errors
        .iter()
        .map(|e| format!("{}: {}", e.field, e.message))
        .collect::<Vec<_>>()
        .join("; ")
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CircuitError {
    #[error("node {node}: child {child} does not precede its parent")]
    NotTopological { node: usize, child: usize },
    #[error("node {0}: inner node without children")]
    Empty(usize),
    #[error("sum node {0} is not smooth")]
    NotSmooth(usize),
    #[error("product node {0} is not decomposable")]
    NotDecomposable(usize),
    #[error("sum node {node}: {message}")]
    BadWeights { node: usize, message: String },
    #[error("leaf node {node}: {message}")]
    BadLeaf { node: usize, message: String },
    #[error("root scope does not cover variable `{0}`")]
    RootScope(String),
    #[error("unknown variable `{0}`")]
    UnknownVariable(String),
    #[error("variable `{name}`: {message}")]
    BadEvidence { name: String, message: String },
    #[error("no score variable bound to this circuit")]
    NoScoreVariable,
    #[error("model file line {line}: {message}")]
    Format { line: usize, message: String },
}

#[derive(Debug, Error)]
pub enum LearnError {
    #[error("cannot learn from an empty data matrix")]
    EmptyData,
    #[error("invalid learning parameters: {0}")]
    Params(String),
    #[error("data matrix: {0}")]
    Data(String),
    #[error(transparent)]
    Circuit(#[from] CircuitError),
}

#[derive(Debug, Error)]
pub enum ObjectiveError {
    #[error("failed to spawn objective command: {0}")]
    Spawn(String),
    #[error("objective command exited with {0}")]
    Exit(String),
    #[error("objective command timed out after {0:.1}s")]
    Timeout(f64),
    #[error("could not parse objective output: {0}")]
    Parse(String),
    #[error("configuration not covered by the table: {0}")]
    Lookup(String),
    #[error("objective table: {0}")]
    Table(String),
}

#[derive(Debug, Error)]
pub enum OptimizerError {
    #[error("invalid optimizer parameters: {0}")]
    Params(String),
    #[error(transparent)]
    Space(#[from] SpaceError),
    #[error(transparent)]
    Knowledge(#[from] KnowledgeError),
    #[error(transparent)]
    Circuit(#[from] CircuitError),
    #[error(transparent)]
    Learn(#[from] LearnError),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

#[derive(Debug, Error)]
pub enum LogError {
    #[error("trial log i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("trial log line {line}: {source}")]
    Json {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
}
