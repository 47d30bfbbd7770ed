//! Knowledge-graph completion with block-term tensor-decomposition models.
//!
//! A knowledge graph is viewed as a binary 3rd-order tensor indexed by
//! (head entity, relation, tail entity). Every model in this crate scores a
//! triplet through a shared core tensor `W` (shape `P x P x P`) contracted
//! with partitioned embedding rows, which covers CP, DistMult, ComplEx,
//! SimplE, ANALOGY, QuatE and TuckER as special cases of one general form.
//!
//! The crate provides:
//!
//! - [`tensor`]: dense rank-3 tensor and matrix kernels (mode-n products,
//!   unfoldings, Kronecker products, SVD-derived quantities),
//! - [`model`]: the general scoring form, preset cores and checkpoints,
//! - [`reg`]: intermediate-variables regularization (IVR) plus F2/N3 baselines,
//! - [`train`]: multiclass log-loss training with Adagrad and hand-derived
//!   gradients,
//! - [`eval`]: filtered link-prediction ranking (MRR, MR, Hits@N),
//! - [`diag`]: overlapped trace norm, upper-bound checks and
//!   equality-achieving decompositions,
//! - [`rules`]: rank tests deciding symmetry / antisymmetry / inverse rule
//!   learnability of a core tensor,
//! - [`data`]: TSV triple ingestion, vocabularies and filter indices.

pub mod data;
pub mod diag;
pub mod eval;
pub mod model;
pub mod reg;
pub mod rules;
pub mod tensor;
pub mod train;

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    #[error("SVD failed to converge for a {rows}x{cols} matrix")]
    SvdFailure { rows: usize, cols: usize },

    #[error("{role} id {id} out of range (count is {count})")]
    IdOutOfRange {
        role: &'static str,
        id: usize,
        count: usize,
    },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("unknown model preset `{0}` (expected one of cp, distmult, complex, simple, analogy, quate, tucker)")]
    UnknownPreset(String),

    #[error("materializing the score tensor needs {required} cells but the budget is {budget}; raise the budget only for small graphs")]
    BudgetExceeded { required: usize, budget: usize },

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("checkpoint integrity check failed: {0}")]
    Integrity(String),

    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error("bound violated: {0}")]
    BoundViolation(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
