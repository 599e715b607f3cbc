use thiserror::Error;

/// Errors surfaced by the kinetic-lattice library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("broadening width theta={theta} must satisfy theta < omega0 - 2 = {margin}")]
    ThetaMargin { theta: f64, margin: f64 },

    #[error("node {0:?} has a component on an edge (0 or +-1/2); functional is singular there")]
    EdgeNode(String),

    #[error("node {0:?} lies in the no-collision region; its connection set is empty")]
    NoCollisionNode(String),

    #[error("unknown region id {0}")]
    UnknownRegion(u32),

    #[error("field is not strictly positive on a participating node (index {node}, value {value})")]
    NonpositiveField { node: usize, value: f64 },

    #[error("time step underflow after {halvings} halvings at t={t}; state too stiff")]
    StiffState { t: f64, halvings: u32 },

    #[error("field floor reached zero at t={t} (min f = {min_f})")]
    FloorViolated { t: f64, min_f: f64 },

    #[error("Newton solve did not converge after {iterations} iterations (best residual {best_residual:e})")]
    NonConvergence { iterations: usize, best_residual: f64 },

    #[error("invariants not admissible on region {region_id}: {reason}")]
    Inadmissible { region_id: u32, reason: String },

    #[error("invariants of field and equilibrium disagree: {0}")]
    InvariantMismatch(String),

    #[error("malformed input file {path}: {reason}")]
    Malformed { path: String, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
