//! Topology-aware distributed reader-writer locks over emulated one-sided
//! RMA, with correctness auditors and a benchmark driver.

pub mod bench;
pub mod dht;
pub mod error;
pub mod lock;
pub mod rma;
pub mod topology;
pub mod verify;

pub use error::{Error, Result};
pub use lock::{LockConfig, LockHandle, LockKind};
pub use rma::{AccOp, RmaContext, Window};
pub use topology::{CounterMap, LockParams, TopologySpec, WindowLayout};
