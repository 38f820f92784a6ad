//! Emulated one-sided RMA memory.
//!
//! A [`Window`] is a per-rank array of 64-bit words addressed by
//! `(rank, offset)`. Processes touch it only through an [`RmaContext`], which
//! issues put / get / accumulate / fetch-and-op / compare-and-swap calls and
//! flushes them per target. Every call is applied atomically to the window
//! when it is issued; a flush is an ordering fence that also validates the
//! tickets returned by value-producing calls.

mod context;
mod latency;
mod sched;

use std::sync::atomic::{AtomicBool, AtomicI64, Ordering};

pub use context::{OpStats, OpTicket, RmaContext};
pub use latency::LatencyModel;
pub use sched::Scheduler;

use crate::error::{Error, Result};

/// The null rank. Ranks are `1..=P`, so a zero-initialised window starts with
/// every queue empty.
pub const EMPTY: i64 = 0;

/// Operation applied by accumulate and fetch-and-op.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AccOp {
    Sum,
    Replace,
}

impl AccOp {
    pub fn apply(self, current: i64, operand: i64) -> i64 {
        match self {
            AccOp::Sum => current.wrapping_add(operand),
            AccOp::Replace => operand,
        }
    }
}

/// One RMA call, as applied to a single cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RmaOp {
    Put(i64),
    Get,
    Accumulate(i64, AccOp),
    Fao(i64, AccOp),
    Cas { src: i64, cmp: i64 },
}

impl RmaOp {
    /// Sequential semantics: the new cell value and the value the call
    /// returns (`None` for calls that return nothing).
    pub fn step(self, current: i64) -> (i64, Option<i64>) {
        match self {
            RmaOp::Put(v) => (v, None),
            RmaOp::Get => (current, Some(current)),
            RmaOp::Accumulate(v, op) => (op.apply(current, v), None),
            RmaOp::Fao(v, op) => (op.apply(current, v), Some(current)),
            RmaOp::Cas { src, cmp } => (if current == cmp { src } else { current }, Some(current)),
        }
    }
}

/// Shared memory exposed by every rank.
#[derive(Debug)]
pub struct Window {
    procs: usize,
    words: usize,
    cells: Box<[AtomicI64]>,
    latency: Option<LatencyModel>,
    strict: bool,
    aborted: AtomicBool,
}

impl Window {
    pub fn new(num_ranks: usize, words_per_rank: usize, latency: Option<LatencyModel>) -> Result<Self> {
        if num_ranks == 0 || words_per_rank == 0 {
            return Err(Error::Config("window needs at least one rank and one word".into()));
        }
        if let Some(model) = &latency {
            if model.topology().procs() != num_ranks {
                return Err(Error::Config(format!(
                    "latency model describes {} ranks, window has {num_ranks}",
                    model.topology().procs()
                )));
            }
        }
        let cells = (0..num_ranks * words_per_rank).map(|_| AtomicI64::new(0)).collect();
        Ok(Self {
            procs: num_ranks,
            words: words_per_rank,
            cells,
            latency,
            strict: true,
            aborted: AtomicBool::new(false),
        })
    }

    /// Relaxed mode skips the read-before-flush check on tickets.
    pub fn relaxed(mut self) -> Self {
        self.strict = false;
        self
    }

    pub fn is_strict(&self) -> bool {
        self.strict
    }

    pub fn procs(&self) -> usize {
        self.procs
    }

    pub fn words_per_rank(&self) -> usize {
        self.words
    }

    pub fn latency(&self) -> Option<&LatencyModel> {
        self.latency.as_ref()
    }

    fn cell(&self, rank: usize, offset: usize) -> Result<&AtomicI64> {
        if rank == 0 || rank > self.procs || offset >= self.words {
            return Err(Error::Address { rank, offset });
        }
        Ok(&self.cells[(rank - 1) * self.words + offset])
    }

    /// Applies `op` atomically and returns the cell value it observed.
    pub fn apply(&self, op: RmaOp, rank: usize, offset: usize) -> Result<i64> {
        let cell = self.cell(rank, offset)?;
        let seen = match op {
            RmaOp::Put(v) => cell.swap(v, Ordering::SeqCst),
            RmaOp::Get => cell.load(Ordering::SeqCst),
            RmaOp::Accumulate(v, AccOp::Sum) | RmaOp::Fao(v, AccOp::Sum) => {
                cell.fetch_add(v, Ordering::SeqCst)
            }
            RmaOp::Accumulate(v, AccOp::Replace) | RmaOp::Fao(v, AccOp::Replace) => {
                cell.swap(v, Ordering::SeqCst)
            }
            RmaOp::Cas { src, cmp } => match cell.compare_exchange(cmp, src, Ordering::SeqCst, Ordering::SeqCst) {
                Ok(prev) | Err(prev) => prev,
            },
        };
        Ok(seen)
    }

    /// Direct read outside the RMA model, for auditors and tests.
    pub fn peek(&self, rank: usize, offset: usize) -> Result<i64> {
        Ok(self.cell(rank, offset)?.load(Ordering::SeqCst))
    }

    /// Direct write outside the RMA model, for setting up fixtures.
    pub fn poke(&self, rank: usize, offset: usize, value: i64) -> Result<()> {
        self.cell(rank, offset)?.store(value, Ordering::SeqCst);
        Ok(())
    }

    /// Simulated cost of one call from `origin` to `target`.
    pub fn delay(&self, origin: usize, target: usize) -> u64 {
        self.latency.as_ref().map_or(0, |m| m.delay(origin, target))
    }

    pub fn abort(&self) {
        self.aborted.store(true, Ordering::SeqCst);
    }

    pub fn is_aborted(&self) -> bool {
        self.aborted.load(Ordering::Relaxed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn create_window_zero_initialised() {
        let w = Window::new(4, 8, None).unwrap();
        for r in 1..=4 {
            for o in 0..8 {
                assert_eq!(w.peek(r, o).unwrap(), EMPTY);
            }
        }
        let one = Window::new(1, 1, None).unwrap();
        assert_eq!(one.peek(1, 0).unwrap(), 0);
        assert!(Window::new(0, 1, None).is_err());
        assert!(Window::new(1, 0, None).is_err());
    }

    #[test]
    fn addressing_errors() {
        let w = Window::new(2, 3, None).unwrap();
        assert_eq!(w.apply(RmaOp::Get, 0, 0), Err(Error::Address { rank: 0, offset: 0 }));
        assert_eq!(w.apply(RmaOp::Get, 3, 0), Err(Error::Address { rank: 3, offset: 0 }));
        assert_eq!(w.apply(RmaOp::Put(1), 1, 3), Err(Error::Address { rank: 1, offset: 3 }));
    }

    #[test]
    fn sequential_semantics() {
        assert_eq!(RmaOp::Accumulate(-3, AccOp::Sum).step(5), (2, None));
        assert_eq!(RmaOp::Accumulate(7, AccOp::Replace).step(2), (7, None));
        assert_eq!(RmaOp::Fao(1, AccOp::Sum).step(10), (11, Some(10)));
        assert_eq!(RmaOp::Fao(3, AccOp::Replace).step(0), (3, Some(0)));
        assert_eq!(RmaOp::Cas { src: 4, cmp: 0 }.step(0), (4, Some(0)));
        assert_eq!(RmaOp::Cas { src: 4, cmp: 0 }.step(9), (9, Some(9)));
        assert_eq!(RmaOp::Cas { src: 0, cmp: 3 }.step(3), (0, Some(3)));
    }

    #[test]
    fn apply_matches_step() {
        let ops = [
            RmaOp::Put(5),
            RmaOp::Get,
            RmaOp::Accumulate(-3, AccOp::Sum),
            RmaOp::Accumulate(7, AccOp::Replace),
            RmaOp::Fao(2, AccOp::Sum),
            RmaOp::Fao(9, AccOp::Replace),
            RmaOp::Cas { src: 1, cmp: 9 },
            RmaOp::Cas { src: 2, cmp: 9 },
        ];
        let w = Window::new(1, 1, None).unwrap();
        let mut model = 0;
        for op in ops {
            let seen = w.apply(op, 1, 0).unwrap();
            let (next, ret) = op.step(model);
            if let Some(ret) = ret {
                assert_eq!(seen, ret);
            }
            model = next;
            assert_eq!(w.peek(1, 0).unwrap(), model);
        }
    }
}
