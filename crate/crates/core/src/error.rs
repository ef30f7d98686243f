use thiserror::Error;

/// Every failure the library reports.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("matrix is singular (condition estimate {condition:.3e})")]
    SingularMatrix { condition: f64 },
    #[error("iteration did not converge: {0}")]
    NoConvergence(String),
    #[error("eigenvalue {0} lies on the closed negative real axis")]
    BranchCut(String),
    #[error("invalid convex weights: {0}")]
    BadWeights(String),
    #[error("no invariant state found within tolerance")]
    NoInvariantState,
    #[error("resolvent is singular (smallest singular value {0:.3e})")]
    ResolventSingular(f64),
    #[error("state is not supported in the return subspace (‖QρQ‖₁ = {0:.3e})")]
    StateOutsideSubspace(f64),
    #[error("channel is not unital on the enclosure (residual {0:.3e})")]
    NotUnitalOnEnclosure(f64),
    #[error("state is not invariant (‖Φ(χ)-χ‖₁ = {0:.3e})")]
    NotInvariant(f64),
    #[error("transition operator matrix is not irreducible")]
    NotIrreducible,
    #[error("invalid partition: {0}")]
    InvalidPartition(String),
    #[error("state is not supported on the overlap sites")]
    StateOutsideOverlap,
    #[error("overlap is not recurrent for the left factor (π = {0})")]
    LeftNotRecurrent(f64),
    #[error("Schur iterate is singular at z = {0}")]
    SingularIterate(String),
    #[error("hypothesis violated: {0}")]
    HypothesisViolated(String),
    #[error("not a projector: {0}")]
    NotProjector(String),
    #[error("invalid input: {0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, Error>;
