use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cell matrix is singular (|det| = {0:e})")]
    SingularCell(f64),

    #[error("first species shift must be the zero vector, got {0:?}")]
    NonzeroOriginShift(Vec<f64>),

    #[error("unsupported dimensions d = {d}, n = {n}")]
    InvalidDimensions { d: usize, n: usize },

    #[error("malformed input: {0}")]
    Invalid(String),

    #[error("same-species bonds of species {species} do not span the lattice")]
    RangeSpan { species: usize },

    #[error("site {0:?} lies outside the lattice window")]
    OutsideWindow(Vec<i64>),

    #[error("negative stiffness {value} on triplet {triplet}")]
    NegativeStiffness { triplet: String, value: f64 },

    #[error("zero-length reference bond on triplet {0}")]
    ZeroLengthBond(String),

    #[error("unknown potential kind `{0}`")]
    UnknownPotential(String),

    #[error("unknown preset `{0}`")]
    UnknownPreset(String),

    #[error("crystal is not phonon stable: {0}")]
    Unstable(String),

    #[error("dynamical matrix is singular at k = 0")]
    SingularPoint,

    #[error("matrix block is not invertible: {0}")]
    NotInvertible(&'static str),

    #[error("inner shift Hessian is indefinite (min eigenvalue {0:e})")]
    IndefiniteShiftHessian(f64),

    #[error("grid size mismatch: expected {expected}, got {got}")]
    SizeMismatch { expected: usize, got: usize },

    #[error("grid order {0} must be even and positive")]
    OddGrid(usize),

    #[error("decay fit needs at least 5 annuli, found {0}")]
    TooFewAnnuli(usize),

    #[error("supercell of order {n} cannot hold a field of extent {extent}")]
    SupercellTooSmall { n: usize, extent: usize },

    #[error("iteration did not converge: {0}")]
    NoConvergence(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
