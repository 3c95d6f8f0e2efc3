use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Failures of the binary state codec.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum StateError {
    #[error("not a state file (bad magic)")]
    BadMagic,
    #[error("unsupported state version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("state file truncated: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("state checksum mismatch (stored {stored:#010x}, computed {computed:#010x})")]
    Checksum { stored: u32, computed: u32 },
    #[error("state file holds a {found}-dimensional state, expected {expected}")]
    Dimension { found: u32, expected: u32 },
    #[error("state payload invalid: {0}")]
    Payload(String),
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid grid: {0}")]
    Grid(String),

    #[error("invalid mixing weights: {0}")]
    Weights(String),

    #[error("configuration error: {0}")]
    Config(String),

    /// `p_g(y)` is numerically zero: the observation is incompatible with the grid.
    #[error("degenerate likelihood at y = {y} (log p = {log_p}){}", after_n(.n))]
    DegenerateLikelihood { y: u64, n: Option<u64>, log_p: f64 },

    #[error("degenerate likelihood at y = {y:?} (log p = {log_p}){}", after_n(.n))]
    DegenerateVector { y: Vec<u64>, n: Option<u64>, log_p: f64 },

    #[error("stream aborted at index {index}: {source}")]
    Stream {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("grid specification infeasible: {0}")]
    SpecInfeasible(String),

    #[error("infinite KL divergence: p_g({y}) = 0 while p_G({y}) > 0")]
    InfiniteDivergence { y: u64 },

    #[error("learning-rate tail sum diverges for gamma = {gamma} (need gamma > 1/2)")]
    DivergentTail { gamma: f64 },

    #[error("size limit exceeded: {0}")]
    TooLarge(String),

    #[error("estimator undefined at y = {y}: no observations with that count")]
    UndefinedAt { y: u64 },

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("optimizer did not converge: {0}")]
    NonConvergence(String),

    #[error("line {line}: {msg}")]
    Parse { line: u64, msg: String },

    #[error("input is empty")]
    EmptyInput,

    #[error(transparent)]
    State(#[from] StateError),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for failures caused by the numbers rather than by the inputs' shape.
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::DegenerateLikelihood { .. }
            | Error::DegenerateVector { .. }
            | Error::InfiniteDivergence { .. }
            | Error::NonConvergence(_)
            | Error::SpecInfeasible(_) => true,
            Error::Stream { source, .. } => source.is_numerical(),
            _ => false,
        }
    }
}

fn after_n(n: &Option<u64>) -> String {
    match n {
        Some(n) => format!(" after {n} observations"),
        None => String::new(),
    }
}
