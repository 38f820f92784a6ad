use std::sync::Arc;

use super::tree::{Outcome, Tree};
use super::{Held, REMOTE_POLL_CAP, LockConfig, LockHandle, ACQUIRE_START, MAX_COUNT, MODE_CHANGE, SENTINEL};
use crate::error::Result;
use crate::rma::{AccOp, RmaContext, EMPTY};
use crate::verify::EventKind;

/// Puts every physical counter in WRITE mode by adding the sentinel to its
/// ARRIVE word. New readers then see a huge count and back off.
pub fn set_counters_to_write(cfg: &LockConfig, ctx: &mut RmaContext) -> Result<()> {
    let off = cfg.layout.arrive();
    for host in cfg.counters.hosts() {
        ctx.accumulate(SENTINEL, host, off, AccOp::Sum)?;
        ctx.flush(host)?;
    }
    Ok(())
}

/// Waits until every reader that got in before WRITE mode has left. A
/// counter found back in READ mode (a reader reset it concurrently) is
/// flipped again.
pub fn drain_readers(cfg: &LockConfig, ctx: &mut RmaContext) -> Result<()> {
    let (arrive, depart) = (cfg.layout.arrive(), cfg.layout.depart());
    for host in cfg.counters.hosts() {
        let cells = [(host, arrive), (host, depart)];
        loop {
            let v = ctx.wait_until(&cells, REMOTE_POLL_CAP, |v| v[0] < SENTINEL || v[0] - SENTINEL == v[1])?;
            if v[0] >= SENTINEL {
                break;
            }
            ctx.accumulate(SENTINEL, host, arrive, AccOp::Sum)?;
            ctx.flush(host)?;
        }
    }
    Ok(())
}

/// Subtracts the departed readers from both words of the counter hosted at
/// `host` and clears WRITE mode.
pub fn reset_counter(cfg: &LockConfig, ctx: &mut RmaContext, host: usize) -> Result<()> {
    reset_with(cfg, ctx, host, true).map(|_| ())
}

/// Returns the number of departures reclaimed. DEPART is taken to zero with
/// a CAS so concurrent resets never subtract the same departures twice.
fn reset_with(cfg: &LockConfig, ctx: &mut RmaContext, host: usize, clear_mode: bool) -> Result<i64> {
    let (arrive, depart) = (cfg.layout.arrive(), cfg.layout.depart());
    let d = loop {
        let d = ctx.get_sync(host, depart)?;
        if d == 0 {
            break 0;
        }
        let t = ctx.cas(0, d, host, depart)?;
        ctx.flush(host)?;
        if ctx.value(t)? == d {
            break d;
        }
    };
    if d == 0 && !clear_mode {
        return Ok(0);
    }
    loop {
        let a = ctx.get_sync(host, arrive)?;
        let mut new = a - d;
        if clear_mode && a >= SENTINEL {
            new -= SENTINEL;
        }
        if new == a {
            break;
        }
        let t = ctx.cas(new, a, host, arrive)?;
        ctx.flush(host)?;
        if ctx.value(t)? == a {
            break;
        }
    }
    ctx.record(EventKind::CounterReset, 0, cfg.counters.counter_index(host));
    Ok(d)
}

pub fn reset_counters(cfg: &LockConfig, ctx: &mut RmaContext) -> Result<()> {
    for host in cfg.counters.hosts() {
        reset_counter(cfg, ctx, host)?;
    }
    Ok(())
}

/// Topology-aware reader-writer lock.
#[derive(Debug)]
pub struct RmaRwHandle {
    tree: Tree,
    counter: usize,
    held: Held,
}

impl RmaRwHandle {
    pub fn new(cfg: Arc<LockConfig>, rank: usize) -> Result<Self> {
        let counter = cfg.counters.counter_rank(rank);
        Ok(Self {
            tree: Tree::new(cfg, rank)?,
            counter,
            held: Held::Nothing,
        })
    }

    fn cfg(&self) -> &LockConfig {
        &self.tree.cfg
    }

    fn writer_queue_empty(&self, ctx: &mut RmaContext) -> Result<bool> {
        let l = self.cfg().layout;
        Ok(ctx.get_sync(self.tree.tail(1), l.tail(1))? == EMPTY)
    }

    fn take_from_readers(&self, ctx: &mut RmaContext) -> Result<()> {
        set_counters_to_write(self.cfg(), ctx)?;
        drain_readers(self.cfg(), ctx)?;
        self.tree.set_status(ctx, 1, ACQUIRE_START)
    }
}

fn release_root(tree: &Tree, ctx: &mut RmaContext) -> Result<()> {
    let cfg = tree.cfg.clone();
    let (succ, status) = tree.node_state(ctx, 1)?;
    let mut next = (status + 1).min(MAX_COUNT);
    let mut handed_to_readers = false;
    if next >= cfg.params.locality(1) {
        reset_counters(&cfg, ctx)?;
        ctx.record(EventKind::ModeChange, 1, 1);
        next = MODE_CHANGE;
        handed_to_readers = true;
    }
    // A successor that shows up during the resets is picked up by the retract.
    let succ = match succ {
        EMPTY => {
            if !handed_to_readers {
                reset_counters(&cfg, ctx)?;
                ctx.record(EventKind::ModeChange, 1, 1);
                next = MODE_CHANGE;
            }
            match tree.retract(ctx, 1)? {
                Some(s) => s,
                None => return Ok(()),
            }
        }
        s => s as usize,
    };
    tree.hand_over(ctx, 1, succ, next)
}

impl LockHandle for RmaRwHandle {
    fn acquire_write(&mut self, ctx: &mut RmaContext) -> Result<()> {
        self.held.enter(Held::Write)?;
        if self.tree.acquire_upper(ctx)? {
            return Ok(());
        }
        match self.tree.enqueue(ctx, 1)? {
            Outcome::Passed(s) if s != MODE_CHANGE => Ok(()),
            _ => self.take_from_readers(ctx),
        }
    }

    fn release_write(&mut self, ctx: &mut RmaContext) -> Result<()> {
        self.held.leave(Held::Write)?;
        let n = self.tree.levels();
        self.tree.release_level(ctx, n, &mut release_root)
    }

    fn acquire_read(&mut self, ctx: &mut RmaContext) -> Result<()> {
        self.held.enter(Held::Read)?;
        let c = self.counter;
        let (arrive, depart) = (self.cfg().layout.arrive(), self.cfg().layout.depart());
        let t_r = self.cfg().params.reader();
        let cells = [(c, arrive), (c, depart), (self.tree.tail(1), self.cfg().layout.tail(1))];
        loop {
            let t = ctx.fao(1, c, arrive, AccOp::Sum)?;
            ctx.flush(c)?;
            let seen = ctx.value(t)?;
            if seen < t_r {
                return Ok(());
            }
            // Over the batch limit. Without a writer to hand over to, reclaim
            // the departed readers so the batch can go on.
            let mut reclaimed = 0;
            if seen < SENTINEL && self.writer_queue_empty(ctx)? {
                // Keeps WRITE mode should a writer have flipped the counter
                // since our arrival.
                reclaimed = reset_with(self.cfg(), ctx, c, false)?;
            }
            ctx.accumulate(-1, c, arrive, AccOp::Sum)?;
            ctx.flush(c)?;
            if reclaimed > 0 {
                continue;
            }
            // Until the batch has room, or there are departures to reclaim.
            ctx.wait_until(&cells, REMOTE_POLL_CAP, |v| {
                v[0] < t_r || (v[0] < SENTINEL && v[1] > 0 && v[2] == EMPTY)
            })?;
        }
    }

    fn release_read(&mut self, ctx: &mut RmaContext) -> Result<()> {
        self.held.leave(Held::Read)?;
        let depart = self.cfg().layout.depart();
        ctx.accumulate(1, self.counter, depart, AccOp::Sum)?;
        ctx.flush(self.counter)
    }
}
