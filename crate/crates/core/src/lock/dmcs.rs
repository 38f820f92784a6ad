use super::{Held, LockHandle, ACQUIRE_START, LOCAL_POLL_CAP, WAIT};
use crate::error::Result;
use crate::rma::{AccOp, RmaContext, EMPTY};
use crate::topology::WindowLayout;
use crate::verify::EventKind;

/// Distributed MCS lock: one queue whose tail lives at `tail_rank`, with each
/// process spinning on its own STATUS word.
#[derive(Debug)]
pub struct DmcsHandle {
    layout: WindowLayout,
    rank: usize,
    tail_rank: usize,
    held: Held,
}

impl DmcsHandle {
    pub fn new(layout: WindowLayout, rank: usize, tail_rank: usize) -> Self {
        Self {
            layout,
            rank,
            tail_rank,
            held: Held::Nothing,
        }
    }
}

impl LockHandle for DmcsHandle {
    fn acquire_write(&mut self, ctx: &mut RmaContext) -> Result<()> {
        self.held.enter(Held::Write)?;
        let (p, l) = (self.rank, self.layout);
        let t = ctx.fao(p as i64, self.tail_rank, l.tail(1), AccOp::Replace)?;
        ctx.flush(self.tail_rank)?;
        let pred = ctx.value(t)?;
        ctx.record(EventKind::QueueEnter, 1, 1);
        if pred != EMPTY {
            let pred = pred as usize;
            // NEXT is already empty at rest; STATUS only matters once linked.
            ctx.put(WAIT, p, l.status(1))?;
            ctx.flush(p)?;
            ctx.put(p as i64, pred, l.next(1))?;
            ctx.flush(pred)?;
            ctx.wait_until(&[(p, l.status(1))], LOCAL_POLL_CAP, |v| v[0] != WAIT)?;
        }
        ctx.record(EventKind::QueueHead, 1, 1);
        Ok(())
    }

    fn release_write(&mut self, ctx: &mut RmaContext) -> Result<()> {
        self.held.leave(Held::Write)?;
        let (p, l) = (self.rank, self.layout);
        let mut succ = ctx.get_sync(p, l.next(1))?;
        if succ == EMPTY {
            let t = ctx.cas(EMPTY, p as i64, self.tail_rank, l.tail(1))?;
            ctx.flush(self.tail_rank)?;
            if ctx.value(t)? == p as i64 {
                return Ok(());
            }
            succ = ctx.wait_until(&[(p, l.next(1))], LOCAL_POLL_CAP, |v| v[0] != EMPTY)?[0];
        }
        let succ = succ as usize;
        ctx.put(ACQUIRE_START, succ, l.status(1))?;
        ctx.flush(succ)?;
        ctx.put(EMPTY, p, l.next(1))?;
        ctx.flush(p)
    }
}
