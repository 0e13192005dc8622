use thiserror::Error;

/// Errors raised by the solver, the verifier and the integrator.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("at least three bodies are required, got {0}")]
    TooFewBodies(usize),

    #[error("mass of body {index} must be positive and finite, got {value}")]
    NonPositiveMass { index: usize, value: f64 },

    #[error("half period must be positive and finite, got {0}")]
    NonPositivePeriod(f64),

    #[error("ordering {0:?} is not a permutation of 1..=n")]
    BadPermutation(Vec<usize>),

    #[error(
        "symmetric mode requires mirror masses, but rank {left} has mass {left_mass} \
         and rank {right} has mass {right_mass}"
    )]
    SymmetryMassMismatch {
        left: usize,
        right: usize,
        left_mass: f64,
        right_mass: f64,
    },

    #[error("bodies {first} and {second} coincide at node {node}")]
    CollisionConfiguration {
        node: usize,
        first: usize,
        second: usize,
    },

    #[error("mesh size {0} is invalid (need an even number of cells, at least 8)")]
    BadMeshSize(usize),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("negative gap {value} between ranks {gap} and {} at node {node}", gap + 1)]
    NegativeGap { node: usize, gap: usize, value: f64 },

    #[error("gap between ranks {gap} and {} at node {node} must vanish, got {value}", gap + 1)]
    NonzeroPatternGap { node: usize, gap: usize, value: f64 },

    #[error("action evaluation failed repeatedly along the line search")]
    DegeneratePath,

    #[error("mesh with {got} cells is too coarse, need at least {required}")]
    MeshTooCoarse { got: usize, required: usize },

    #[error("non-regularizable close approach of bodies {bodies:?} at t = {time}")]
    NonRegularizableEvent { time: f64, bodies: Vec<usize> },

    #[error("integration step failed at t = {time}: {reason}")]
    StepFailure { time: f64, reason: String },

    #[error("invalid option: {0}")]
    InvalidOption(String),

    #[error("config: {0}")]
    Config(String),

    #[error("{path}: {message}")]
    Io { path: String, message: String },

    #[error("{path}: {message}")]
    Format { path: String, message: String },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
