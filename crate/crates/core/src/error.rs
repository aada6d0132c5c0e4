use alloc::boxed::Box;
use alloc::string::String;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("tree has no edges")]
    EmptyTree,
    #[error("node `{node}` has more than one parent")]
    MultipleParents { node: String },
    #[error("tree has more than one root: `{first}` and `{second}`")]
    MultipleRoots { first: String, second: String },
    #[error("cycle detected through node `{node}`")]
    CycleDetected { node: String },
    #[error("internal node `{node}` has {count} child; at least 2 are required")]
    TooFewChildren { node: String, count: usize },
    #[error("leaf index {index} out of range for {leaf_count} leaves")]
    LeafIndexOutOfRange { index: usize, leaf_count: usize },

    #[error("{what}: expected length {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("{what} is not a probability vector (sum {sum})")]
    NotSimplex { what: &'static str, sum: f64 },
    #[error("parameter of branch {branch} is not positive ({value})")]
    NonPositiveParameter { branch: usize, value: f64 },
    #[error("component {index} of theta is not positive ({value})")]
    NonPositiveTheta { index: usize, value: f64 },
    #[error("mass of node `{node}` vanished")]
    ZeroNodeMass { node: String },
    #[error("invalid argument: {0}")]
    InvalidArgument(&'static str),

    #[error("{solver} did not converge after {iterations} iterations")]
    NoConvergence {
        solver: &'static str,
        iterations: usize,
    },
    #[error("Newton step could not reduce the residual while keeping parameters positive")]
    PositivityLost,
    #[error("moment matching failed at node `{node}`: {source}")]
    NodeSolve {
        node: String,
        #[source]
        source: Box<Error>,
    },

    #[error("enumeration budget exceeded ({tokens} tokens, {topics} topics)")]
    BudgetExceeded { tokens: usize, topics: usize },
    #[error("word {word} has zero probability under a topic with positive responsibility")]
    ZeroLikelihood { word: usize },
    #[error("word {word} has zero probability under every topic")]
    ImpossibleWord { word: usize },
    #[error("document {doc} assigns zero predictive mass to word {word}")]
    ZeroPredictiveMass { doc: usize, word: usize },
    #[error("document {doc} is empty")]
    EmptyDocument { doc: usize },
    #[error("word id {word} out of range for vocabulary of size {vocab_size}")]
    WordOutOfRange { word: usize, vocab_size: usize },

    #[error("conditional matrix and marginals are inconsistent (max error {max_error})")]
    InconsistentMarginals { max_error: f64 },
    #[error("marginal entry {index} is zero")]
    ZeroMarginal { index: usize },
    #[error("base entry ({row}, {col}) is not positive")]
    NonPositiveBase { row: usize, col: usize },
}
