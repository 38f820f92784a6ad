use crate::error::Result;
use crate::lock::{Held, LockHandle, REMOTE_POLL_CAP};
use crate::rma::RmaContext;
use crate::topology::WindowLayout;

/// Rank hosting the spin word.
const HOST: usize = 1;

/// Test-and-set lock on one word at rank 1. The owner's rank marks it taken.
#[derive(Debug)]
pub struct SpinHandle {
    layout: WindowLayout,
    rank: usize,
    held: Held,
}

impl SpinHandle {
    pub fn new(layout: WindowLayout, rank: usize) -> Self {
        Self {
            layout,
            rank,
            held: Held::Nothing,
        }
    }
}

impl LockHandle for SpinHandle {
    fn acquire_write(&mut self, ctx: &mut RmaContext) -> Result<()> {
        self.held.enter(Held::Write)?;
        // Every retry is a CAS on the host, as a plain test-and-set would do.
        let mut delay = 16;
        loop {
            let t = ctx.cas(self.rank as i64, 0, HOST, self.layout.spin())?;
            ctx.flush(HOST)?;
            if ctx.value(t)? == 0 {
                return Ok(());
            }
            ctx.pause(delay)?;
            delay = (delay * 2).min(REMOTE_POLL_CAP);
        }
    }

    fn release_write(&mut self, ctx: &mut RmaContext) -> Result<()> {
        self.held.leave(Held::Write)?;
        ctx.put(0, HOST, self.layout.spin())?;
        ctx.flush(HOST)
    }
}
