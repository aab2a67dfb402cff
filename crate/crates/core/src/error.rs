use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("qubit index {index} out of range for a {n_qubits}-qubit register")]
    QubitOutOfRange { index: usize, n_qubits: usize },

    #[error("gate targets must be distinct, got {0:?}")]
    DuplicateTargets(Vec<usize>),

    #[error("control qubit {0} overlaps a gate target")]
    ControlOverlap(usize),

    #[error("matrix is not unitary (max |U^dag U - I| = {deviation:.3e})")]
    NotUnitary { deviation: f64 },

    #[error("gate of arity {arity} needs a {expected}x{expected} matrix, got {len} entries")]
    GateShape { arity: usize, expected: usize, len: usize },

    #[error("state has {got} amplitudes, expected {expected}")]
    StateLength { got: usize, expected: usize },

    #[error("state is not normalized (norm^2 = {0})")]
    NotNormalized(f64),

    #[error("shot count must be at least 1")]
    ZeroShots,

    #[error("{n_qubits} qubits exceeds the dense limit of {limit}")]
    TooManyQubits { n_qubits: usize, limit: usize },

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid initial state: {0}")]
    InvalidInitialState(String),

    #[error("invalid time grid: {0}")]
    InvalidGrid(String),

    #[error("need moments through order {needed}, have {available}")]
    InsufficientMoments { needed: usize, available: usize },

    #[error("sampling bound violated: {0}")]
    Aliasing(String),

    #[error("ill-conditioned linear system (condition number {cond:.3e})")]
    IllConditioned { cond: f64 },

    #[error("no admissible Pade approximant:\n{0}")]
    NoAdmissiblePade(String),

    #[error("integration failed: {0}")]
    Integration(String),

    #[error("all overlap eigenvalues fall below the cutoff")]
    DegenerateOverlap,

    #[error("singular matrix (|det| = {0:.3e})")]
    Singular(f64),

    #[error("error signal below numeric floor at every probe time")]
    BelowNumericFloor,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
