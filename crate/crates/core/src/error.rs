use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("entity id {id} out of range (graph has {count} entities)")]
    InvalidEntity { id: u32, count: usize },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AttrError {
    #[error("attribute type `{0}` has no observed values")]
    NoObserved(String),
    #[error("unknown attribute type id {0}")]
    UnknownType(u32),
}

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("line {line}: expected {expected} tab-separated fields, found {found}")]
    Arity {
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("line {line}: empty field")]
    EmptyField { line: usize },
    #[error("line {line}: cannot parse `{text}` as a finite number")]
    BadNumber { line: usize, text: String },
    #[error("line {line}: unknown split label `{text}`")]
    BadSplitLabel { line: usize, text: String },
    #[error("line {line}: `{entity}`/`{attr}` is not in the attribute table")]
    UnknownEntry {
        line: usize,
        entity: String,
        attr: String,
    },
    #[error("split manifest does not cover {missing} attribute entries")]
    IncompleteManifest { missing: usize },
    #[error("invalid split fractions {0:?}: each must be positive and they must sum to 1")]
    BadSplitSpec([f64; 3]),
    #[error("observed fraction {0} must lie in (0, 1]")]
    BadFraction(f64),
    #[error("no attribute entries to split")]
    NoAttributes,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RegressionError {
    #[error("insufficient support: {0} pairs (need at least 2)")]
    InsufficientSupport(usize),
    #[error("degenerate regressor: independent attribute has zero variance")]
    DegenerateRegressor,
    #[error("slope {eta} is below the invertibility threshold {eta_min}")]
    NonInvertibleSlope { eta: f64, eta_min: f64 },
}

#[derive(Debug, Error)]
pub enum DumpError {
    #[error("line {line}: {msg}")]
    Malformed { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PropagationError {
    #[error("invalid propagation config: {0}")]
    Config(String),
    #[error(transparent)]
    Attr(#[from] AttrError),
    #[error("fixed-point system is singular; dependent components: {0:?}")]
    Singular(Vec<String>),
}
