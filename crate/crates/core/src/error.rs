use thiserror::Error;

/// Errors surfaced by the RMA emulation, the lock protocols, and the harness.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("address out of range: rank {rank}, offset {offset}")]
    Address { rank: usize, offset: usize },

    #[error("invalid level {level} (machine has {levels} levels)")]
    Level { level: usize, levels: usize },

    #[error("ticket for rank {target} read before flush")]
    Unflushed { target: usize },

    #[error("protocol violation: {0}")]
    Protocol(&'static str),

    #[error("run aborted")]
    Aborted,

    #[error("deadlock: every remaining process waits on the window")]
    Deadlock,

    #[error("capacity exhausted: {0}")]
    Capacity(&'static str),
}

pub type Result<T> = std::result::Result<T, Error>;
