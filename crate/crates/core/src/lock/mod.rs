//! Distributed locks over the emulated RMA window.
//!
//! * [`DmcsHandle`]: the topology-oblivious distributed MCS lock.
//! * [`RmaMcsHandle`]: per-element MCS queues bound into a tree, exclusive only.
//! * [`RmaRwHandle`]: the same tree for writers plus distributed reader
//!   counters.
//!
//! Every lock keeps all shared state in the window; a handle only remembers
//! what its own process holds.

mod dmcs;
mod rmamcs;
mod rmarw;
mod tree;

use std::sync::Arc;

pub use dmcs::DmcsHandle;
pub use rmamcs::RmaMcsHandle;
pub use rmarw::{drain_readers, reset_counter, reset_counters, set_counters_to_write, RmaRwHandle};

use crate::bench::SpinHandle;
use crate::error::{Error, Result};
use crate::rma::RmaContext;
use crate::topology::{CounterMap, LockParams, TopologySpec, WindowLayout};

/// STATUS value of a process spinning in a queue.
pub const WAIT: i64 = -1;
/// STATUS value telling the head of a queue to acquire the parent level.
pub const ACQUIRE_PARENT: i64 = -2;
/// STATUS value telling a level-1 writer that readers own the lock.
pub const MODE_CHANGE: i64 = -3;
/// STATUS value of a process that took a queue without a predecessor.
pub const ACQUIRE_START: i64 = 0;
/// Added to ARRIVE to put a physical counter in WRITE mode.
pub const SENTINEL: i64 = 1 << 62;
/// Upper bound for pass counts carried in STATUS.
pub const MAX_COUNT: i64 = 1 << 40;

/// Per-process view of one lock instance.
pub trait LockHandle: Send {
    fn acquire_write(&mut self, ctx: &mut RmaContext) -> Result<()>;
    fn release_write(&mut self, ctx: &mut RmaContext) -> Result<()>;

    /// Exclusive locks treat readers as writers.
    fn acquire_read(&mut self, ctx: &mut RmaContext) -> Result<()> {
        self.acquire_write(ctx)
    }

    fn release_read(&mut self, ctx: &mut RmaContext) -> Result<()> {
        self.release_write(ctx)
    }
}

/// Everything a lock needs to know about the machine.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LockConfig {
    pub topology: TopologySpec,
    pub counters: CounterMap,
    pub params: LockParams,
    pub layout: WindowLayout,
}

impl LockConfig {
    pub fn new(topology: TopologySpec, counters: CounterMap, params: LockParams) -> Result<Self> {
        if params.levels() != topology.levels() {
            return Err(Error::Config(format!(
                "{} locality thresholds given for a {}-level machine",
                params.levels(),
                topology.levels()
            )));
        }
        if counters.count() > topology.procs() || counters.host_rank(counters.count()) > topology.procs() {
            return Err(Error::Config("counter placement exceeds the process count".into()));
        }
        let layout = WindowLayout::for_topology(&topology);
        Ok(Self {
            topology,
            counters,
            params,
            layout,
        })
    }

    pub fn procs(&self) -> usize {
        self.topology.procs()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, clap::ValueEnum)]
pub enum LockKind {
    /// Test-and-set spin lock on one global word.
    Spin,
    Dmcs,
    Rmamcs,
    Rmarw,
}

impl LockKind {
    pub const ALL: [LockKind; 4] = [LockKind::Spin, LockKind::Dmcs, LockKind::Rmamcs, LockKind::Rmarw];

    pub fn name(self) -> &'static str {
        match self {
            LockKind::Spin => "spin",
            LockKind::Dmcs => "dmcs",
            LockKind::Rmamcs => "rmamcs",
            LockKind::Rmarw => "rmarw",
        }
    }

    pub fn is_reader_writer(self) -> bool {
        self == LockKind::Rmarw
    }

    pub fn handle(self, cfg: &Arc<LockConfig>, rank: usize) -> Result<Box<dyn LockHandle>> {
        cfg.topology.check_rank(rank)?;
        Ok(match self {
            LockKind::Spin => Box::new(SpinHandle::new(cfg.layout, rank)),
            LockKind::Dmcs => Box::new(DmcsHandle::new(cfg.layout, rank, 1)),
            LockKind::Rmamcs => Box::new(RmaMcsHandle::new(cfg.clone(), rank)?),
            LockKind::Rmarw => Box::new(RmaRwHandle::new(cfg.clone(), rank)?),
        })
    }
}

/// Backoff cap when polling a word in the poller's own window.
pub(crate) const LOCAL_POLL_CAP: u64 = 32;
/// Backoff cap when polling a remote, possibly contended word.
pub(crate) const REMOTE_POLL_CAP: u64 = 1024;

/// Tracks what a handle holds so misuse is reported instead of corrupting
/// the queues.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Held {
    Nothing,
    Read,
    Write,
}

impl Held {
    pub fn enter(&mut self, mode: Held) -> Result<()> {
        if *self != Held::Nothing {
            return Err(Error::Protocol("lock is not reentrant"));
        }
        *self = mode;
        Ok(())
    }

    pub fn leave(&mut self, mode: Held) -> Result<()> {
        if *self != mode {
            return Err(Error::Protocol("release without a matching acquire"));
        }
        *self = Held::Nothing;
        Ok(())
    }
}

#[cfg(test)]
mod tests;
