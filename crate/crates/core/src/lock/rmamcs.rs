use std::sync::Arc;

use super::tree::{Outcome, Tree};
use super::{Held, LockConfig, LockHandle, ACQUIRE_START, MAX_COUNT};
use crate::error::Result;
use crate::rma::{RmaContext, EMPTY};

/// Topology-aware exclusive lock. Level 1 has no locality threshold: the
/// root queue passes the lock straight down the line.
#[derive(Debug)]
pub struct RmaMcsHandle {
    tree: Tree,
    held: Held,
}

impl RmaMcsHandle {
    pub fn new(cfg: Arc<LockConfig>, rank: usize) -> Result<Self> {
        Ok(Self {
            tree: Tree::new(cfg, rank)?,
            held: Held::Nothing,
        })
    }
}

fn release_root(tree: &Tree, ctx: &mut RmaContext) -> Result<()> {
    let (succ, status) = tree.node_state(ctx, 1)?;
    let next = (status + 1).min(MAX_COUNT);
    let succ = match succ {
        EMPTY => match tree.retract(ctx, 1)? {
            Some(s) => s,
            None => return Ok(()),
        },
        s => s as usize,
    };
    tree.hand_over(ctx, 1, succ, next)
}

impl LockHandle for RmaMcsHandle {
    fn acquire_write(&mut self, ctx: &mut RmaContext) -> Result<()> {
        self.held.enter(Held::Write)?;
        if self.tree.acquire_upper(ctx)? {
            return Ok(());
        }
        if self.tree.enqueue(ctx, 1)? == Outcome::Head {
            self.tree.set_status(ctx, 1, ACQUIRE_START)?;
        }
        Ok(())
    }

    fn release_write(&mut self, ctx: &mut RmaContext) -> Result<()> {
        self.held.leave(Held::Write)?;
        let n = self.tree.levels();
        self.tree.release_level(ctx, n, &mut release_root)
    }
}
