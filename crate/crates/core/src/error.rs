use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension must be 2 or 3, got {0}")]
    InvalidDimension(usize),
    #[error("degenerate domain: {0}")]
    DegenerateDomain(String),
    #[error("zero vector not allowed: {0}")]
    ZeroVector(&'static str),
    #[error("atom {0:?} is not a lattice node")]
    UnsupportedAtom(Vec<i32>),
    #[error("total mass mismatch: {0} vs {1}")]
    MassMismatch(f64, f64),
    #[error("program exceeds size cap: {nonzeros} nonzeros > {cap}")]
    SizeCapExceeded { nonzeros: usize, cap: usize },
    #[error("numerical breakdown in LP solve: {0}")]
    NumericalBreakdown(String),
    #[error("program is not embedding-shaped")]
    NotEmbeddingShaped,
    #[error("measure support node {0:?} is off the lattice")]
    SupportOffLattice(Vec<i32>),
    #[error("measure is not a probability (total {0})")]
    NonProbability(f64),
    #[error("embedding is infeasible")]
    InfeasibleEmbedding,
    #[error("solution is not optimal (status {0})")]
    NotOptimal(String),
    #[error("start node must be nonzero")]
    ZeroStart,
    #[error("operation requires min sense and alpha <= 1 (got alpha {alpha}, sense {sense})")]
    WrongRegime { alpha: f64, sense: String },
    #[error("radial profile unreachable from the start")]
    ProfileUnreachable,
    #[error("singular linear system: {0}")]
    SingularSystem(String),
    #[error("measure is empty")]
    EmptyMeasure,
    #[error("ball of radius {r} around {x:?} escapes the domain")]
    BallEscapesDomain { x: Vec<i32>, r: f64 },
    #[error("no lattice nodes at radius {r} around {x:?}")]
    EmptyShell { x: Vec<i32>, r: f64 },
    #[error("iteration did not converge after {iters} sweeps (max delta {max_delta})")]
    NotConverged { iters: usize, max_delta: f64 },
    #[error("policy has no stop probability at reachable node {0:?}")]
    PolicyGap(Vec<i32>),
    #[error("empty radial profile")]
    EmptyProfile,
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

pub type Result<T> = std::result::Result<T, Error>;
