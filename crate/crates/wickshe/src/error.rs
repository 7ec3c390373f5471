use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("enumeration would produce {count} multi-indices, above the cap of {cap}")]
    TooManyIndices { count: u128, cap: usize },
    #[error("order {order} exceeds the cap of {cap}")]
    OrderCap { order: usize, cap: usize },
    #[error("insufficient quadrature coverage: {0}")]
    Coverage(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("no convergence: {0}")]
    NonConvergence(String),
    #[error("unstable propagator: {0}")]
    Unstable(String),
    #[error("CFL condition violated: {0}")]
    Cfl(String),
    #[error("truncation specs differ")]
    SpecMismatch,
    #[error("level grids differ: {0}")]
    GridMismatch(String),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("overflow guard: {0}")]
    Overflow(String),
    #[error("order-{order} tail holds {share:.4} of the moment at {at}, above the {limit} gate")]
    TruncationTail { order: usize, share: f64, limit: f64, at: String },
    #[error("initial condition has no derivative")]
    MissingDerivative,
}

pub type Result<T> = std::result::Result<T, Error>;
