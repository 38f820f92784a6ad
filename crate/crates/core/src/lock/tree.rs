//! Writer path shared by the hierarchical locks: one MCS queue per machine
//! element at every level, where the head of a queue at level `i` competes
//! in the queue of its parent element at level `i - 1`.
//!
//! The queue node a process uses at level `N` is the process itself. At a
//! level `i < N` it is the node of the level-`i + 1` element the process
//! belongs to, hosted at that element's lowest rank: a process only reaches
//! level `i` while heading its element's queue, so the node is never in use
//! twice. Node ids stored in TAIL and NEXT are host ranks.

use std::cell::Cell;
use std::sync::Arc;

use super::{LockConfig, ACQUIRE_PARENT, ACQUIRE_START, LOCAL_POLL_CAP, MAX_COUNT, WAIT};
use crate::error::Result;
use crate::rma::{AccOp, RmaContext, EMPTY};
use crate::verify::EventKind;

/// How a queue at some level was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(super) enum Outcome {
    /// A predecessor handed over the lock with this STATUS.
    Passed(i64),
    /// First in the queue, or told to fetch the parent level.
    Head,
}

#[derive(Debug)]
pub(super) struct Tree {
    pub cfg: Arc<LockConfig>,
    // Indexed by level; slot 0 unused.
    nodes: Vec<usize>,
    tails: Vec<usize>,
    elements: Vec<usize>,
    // Only the owner reads its level-N STATUS, so it keeps a copy instead.
    own_status: Cell<i64>,
}

impl Tree {
    pub fn new(cfg: Arc<LockConfig>, rank: usize) -> Result<Self> {
        let topo = &cfg.topology;
        topo.check_rank(rank)?;
        let n = topo.levels();
        let mut nodes = vec![0; n + 1];
        let mut tails = vec![0; n + 1];
        let mut elements = vec![0; n + 1];
        for level in 1..=n {
            let e = topo.element_of(rank, level)?;
            elements[level] = e;
            tails[level] = topo.tail_host(level, e)?;
            nodes[level] = if level == n {
                rank
            } else {
                topo.tail_host(level + 1, topo.element_of(rank, level + 1)?)?
            };
        }
        Ok(Self {
            cfg,
            nodes,
            tails,
            elements,
            own_status: Cell::new(ACQUIRE_START),
        })
    }

    pub fn levels(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn node(&self, level: usize) -> usize {
        self.nodes[level]
    }

    pub fn tail(&self, level: usize) -> usize {
        self.tails[level]
    }

    /// Joins the queue at `level` and waits for a handover if there is a
    /// predecessor.
    pub fn enqueue(&self, ctx: &mut RmaContext, level: usize) -> Result<Outcome> {
        let l = self.cfg.layout;
        let (node, tail) = (self.node(level), self.tail(level));
        let t = ctx.fao(node as i64, tail, l.tail(level), AccOp::Replace)?;
        ctx.flush(tail)?;
        let pred = ctx.value(t)?;
        ctx.record(EventKind::QueueEnter, level, self.elements[level]);
        if pred == EMPTY {
            ctx.record(EventKind::QueueHead, level, self.elements[level]);
            return Ok(Outcome::Head);
        }
        let pred = pred as usize;
        ctx.put(WAIT, node, l.status(level))?;
        ctx.flush(node)?;
        ctx.put(node as i64, pred, l.next(level))?;
        ctx.flush(pred)?;
        let status = ctx.wait_until(&[(node, l.status(level))], LOCAL_POLL_CAP, |v| v[0] != WAIT)?[0];
        ctx.record(EventKind::QueueHead, level, self.elements[level]);
        if level == self.levels() {
            self.own_status.set(status);
        }
        Ok(if status == ACQUIRE_PARENT {
            Outcome::Head
        } else {
            Outcome::Passed(status)
        })
    }

    pub fn set_status(&self, ctx: &mut RmaContext, level: usize, status: i64) -> Result<()> {
        if level == self.levels() {
            self.own_status.set(status);
            return Ok(());
        }
        let node = self.node(level);
        ctx.put(status, node, self.cfg.layout.status(level))?;
        ctx.flush(node)
    }

    /// Walks the queues from level `N` toward the root. Returns `true` if a
    /// handover at some level `>= 2` already grants the lock; `false` means
    /// the caller must still take level 1.
    pub fn acquire_upper(&self, ctx: &mut RmaContext) -> Result<bool> {
        for level in (2..=self.levels()).rev() {
            match self.enqueue(ctx, level)? {
                Outcome::Passed(_) => return Ok(true),
                Outcome::Head => self.set_status(ctx, level, ACQUIRE_START)?,
            }
        }
        Ok(false)
    }

    /// Releases `level` (at least 2) and, when the lock leaves this element,
    /// everything below it, finishing with `root` for level 1.
    pub fn release_level(
        &self,
        ctx: &mut RmaContext,
        level: usize,
        root: &mut dyn FnMut(&Tree, &mut RmaContext) -> Result<()>,
    ) -> Result<()> {
        if level == 1 {
            return root(self, ctx);
        }
        let (succ, status) = self.node_state(ctx, level)?;
        let next = (status + 1).min(MAX_COUNT);
        if succ != EMPTY && next < self.cfg.params.locality(level) {
            return self.hand_over(ctx, level, succ as usize, next);
        }
        self.release_level(ctx, level - 1, root)?;
        let succ = match succ {
            EMPTY => match self.retract(ctx, level)? {
                Some(s) => s,
                None => return Ok(()),
            },
            s => s as usize,
        };
        self.hand_over(ctx, level, succ, ACQUIRE_PARENT)
    }

    /// NEXT and STATUS of our node at `level`.
    pub fn node_state(&self, ctx: &mut RmaContext, level: usize) -> Result<(i64, i64)> {
        let l = self.cfg.layout;
        let node = self.node(level);
        if level == self.levels() {
            return Ok((ctx.get_sync(node, l.next(level))?, self.own_status.get()));
        }
        let succ_t = ctx.get(node, l.next(level))?;
        let status_t = ctx.get(node, l.status(level))?;
        ctx.flush(node)?;
        Ok((ctx.value(succ_t)?, ctx.value(status_t)?))
    }

    pub fn wait_successor(&self, ctx: &mut RmaContext, level: usize) -> Result<i64> {
        let cell = (self.node(level), self.cfg.layout.next(level));
        Ok(ctx.wait_until(&[cell], LOCAL_POLL_CAP, |v| v[0] != EMPTY)?[0])
    }

    /// Writes `status` into the successor's node and clears our NEXT.
    pub fn hand_over(&self, ctx: &mut RmaContext, level: usize, succ: usize, status: i64) -> Result<()> {
        let l = self.cfg.layout;
        let node = self.node(level);
        ctx.put(status, succ, l.status(level))?;
        ctx.flush(succ)?;
        ctx.put(EMPTY, node, l.next(level))?;
        ctx.flush(node)
    }

    /// Retracts from the queue at `level` if nobody is behind us. Returns the
    /// successor otherwise.
    pub fn retract(&self, ctx: &mut RmaContext, level: usize) -> Result<Option<usize>> {
        let (node, tail) = (self.node(level), self.tail(level));
        let t = ctx.cas(EMPTY, node as i64, tail, self.cfg.layout.tail(level))?;
        ctx.flush(tail)?;
        if ctx.value(t)? == node as i64 {
            return Ok(None);
        }
        Ok(Some(self.wait_successor(ctx, level)? as usize))
    }
}
