use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// An argument outside the documented domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("pole singularity: colatitude {colatitude_deg}° has zero zonal spacing")]
    PoleSingularity { colatitude_deg: f64 },

    #[error("infeasible decomposition: {parts} parts requested for {points} points along {dim}")]
    InfeasibleDecomposition {
        dim: &'static str,
        points: usize,
        parts: usize,
    },

    #[error("infeasible window: width {width} does not fit a zonal circle of {nx} points")]
    InfeasibleWindow { width: usize, nx: usize },

    /// A caller broke an operation's precondition (stale halo, mismatched geometry, ...).
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("collective contract error on {comm}: {detail}")]
    Collective { comm: String, detail: String },

    #[error("deadlock: {}", format_blocked(.blocked))]
    Deadlock { blocked: Vec<BlockedRank> },

    #[error("numerical failure: non-finite value in {field} at (i={i}, j={j}, k={k})")]
    Numerical {
        field: String,
        i: usize,
        j: usize,
        k: usize,
    },
}

/// A rank stuck in `recv` when the runtime gave up.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockedRank {
    pub rank: usize,
    pub waiting_on: usize,
    pub tag: String,
}

fn format_blocked(blocked: &[BlockedRank]) -> String {
    let parts: Vec<String> = blocked
        .iter()
        .map(|b| format!("rank {} waits on rank {} [{}]", b.rank, b.waiting_on, b.tag))
        .collect();
    format!("all ranks blocked: {}", parts.join("; "))
}
