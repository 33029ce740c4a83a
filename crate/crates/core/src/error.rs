use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("disconnected topology: {0}")]
    DisconnectedTopology(String),

    #[error("invalid graph: {0}")]
    InvalidGraph(String),

    #[error("mixing matrix violates {clause}: {detail}")]
    MixingMatrix { clause: &'static str, detail: String },

    #[error("index out of range: {0}")]
    IndexOutOfRange(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid batch size {batch} for {samples} samples")]
    BatchSize { batch: usize, samples: usize },

    #[error("stale snapshot gradient on node {node}: snapshot point changed without refreshing its full gradient")]
    StaleSnapshot { node: usize },

    #[error("asymmetric matrix (max |H - H^T| = {0:e})")]
    Asymmetric(f64),

    #[error("hessian approximation on node {node} at iteration {k} left [{m1}, {m2}]: eigenvalues in [{lo}, {hi}]")]
    HessianBounds { node: usize, k: usize, m1: f64, m2: f64, lo: f64, hi: f64 },

    #[error("reference solver did not converge: {0}")]
    NoConvergence(String),

    #[error("iterates diverged at iteration {k}: max node norm {norm:e}")]
    Diverged { k: usize, norm: f64 },

    #[error("parameter gate failed: {0}")]
    GateFailed(String),

    #[error("certificate discrepancy in check {check}: {detail}")]
    TheoryDiscrepancy { check: &'static str, detail: String },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit status for the CLI: 2 for bad input, 3 for a failed gate
    /// or certificate, 4 for divergence and 1 for anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::DisconnectedTopology(_)
            | Error::InvalidGraph(_)
            | Error::MixingMatrix { .. }
            | Error::BatchSize { .. }
            | Error::InvalidParameter(_)
            | Error::Config(_)
            | Error::Data(_)
            | Error::DimensionMismatch(_) => 2,
            Error::GateFailed(_) | Error::TheoryDiscrepancy { .. } => 3,
            Error::Diverged { .. } => 4,
            _ => 1,
        }
    }
}
