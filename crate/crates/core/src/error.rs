use thiserror::Error;

/// Errors raised by the numeric core.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    Dimension {
        context: &'static str,
        expected: String,
        got: String,
    },

    #[error("contract violation: {0}")]
    Contract(String),

    /// The stacked Hankel matrix lost row rank; the caller has to re-probe
    /// with a fresh input sequence.
    #[error("singular representation: smallest/largest singular value ratio {ratio:.3e} (rank {rank} of {rows} rows)")]
    SingularRepresentation { ratio: f64, rank: usize, rows: usize },

    #[error("system is not (1,rho)-stable: ||A^{k}|| = {norm:.6} with rho_hat = {rho_hat:.6}")]
    Unstable { k: usize, norm: f64, rho_hat: f64 },

    #[error("system does not satisfy the declared decay rate rho = {rho:.6} (certified {rho_hat:.6})")]
    DecayRate { rho: f64, rho_hat: f64 },

    #[error("pair (A, B) is not controllable: controllability rank {rank} < {n}")]
    Uncontrollable { rank: usize, n: usize },

    #[error("input sequence is not persistently exciting of order {order} after {attempts} attempts")]
    Persistency { order: usize, attempts: usize },

    #[error("environment error: {0}")]
    Environment(String),

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn dim_err(context: &'static str, expected: impl ToString, got: impl ToString) -> Error {
    Error::Dimension {
        context,
        expected: expected.to_string(),
        got: got.to_string(),
    }
}
