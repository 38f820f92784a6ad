//! Hashtable volume hosted in one rank's window: a fixed table of slots plus
//! an overflow heap of `(value, next)` cells chained per slot.
//!
//! Slots and heap values use 0 for "empty", so 0 cannot be stored. Chain
//! links are heap index + 1, with 0 ending a chain. Every mutation is a
//! single CAS or FAO-style update, so the volume is safe without a lock;
//! the lock-protected modes wrap whole operations in a lock.

use crate::error::{Error, Result};
use crate::rma::{RmaContext, Window, EMPTY};
use crate::verify::SequentialSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, clap::ValueEnum)]
pub enum DhtMode {
    /// CAS/FAO only, no lock.
    Atomics,
    /// Inserts under the writer lock, lookups under the reader lock.
    Rw,
    /// Every operation under the exclusive topology-aware lock.
    Mcs,
}

impl DhtMode {
    pub fn name(self) -> &'static str {
        match self {
            DhtMode::Atomics => "atomics",
            DhtMode::Rw => "rw",
            DhtMode::Mcs => "mcs",
        }
    }
}

/// Word offsets of one volume inside a rank's window, starting at `base`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VolumeLayout {
    base: usize,
    table: usize,
    heap: usize,
}

impl VolumeLayout {
    pub fn new(base: usize, table: usize, heap: usize) -> Result<Self> {
        if table == 0 {
            return Err(Error::Config("table size must be positive".into()));
        }
        Ok(Self { base, table, heap })
    }

    pub fn table_size(&self) -> usize {
        self.table
    }

    pub fn heap_size(&self) -> usize {
        self.heap
    }

    /// Words this volume occupies.
    pub fn words(&self) -> usize {
        3 * self.table + 2 * self.heap + 1
    }

    /// First word past the volume.
    pub fn end(&self) -> usize {
        self.base + self.words()
    }

    pub fn hash(&self, v: i64) -> usize {
        v.rem_euclid(self.table as i64) as usize
    }

    pub fn slot(&self, h: usize) -> usize {
        self.base + h
    }

    /// Head link of the overflow chain of slot `h`.
    pub fn first(&self, h: usize) -> usize {
        self.base + self.table + h
    }

    /// Hint: a link to some cell near the end of the chain of slot `h`.
    pub fn last(&self, h: usize) -> usize {
        self.base + 2 * self.table + h
    }

    pub fn heap_value(&self, i: usize) -> usize {
        self.base + 3 * self.table + 2 * i
    }

    pub fn heap_next(&self, i: usize) -> usize {
        self.heap_value(i) + 1
    }

    pub fn next_free(&self) -> usize {
        self.base + 3 * self.table + 2 * self.heap
    }
}

/// Inserts `v` into the volume owned by `owner`.
pub fn insert(ctx: &mut RmaContext, vol: &VolumeLayout, owner: usize, v: i64) -> Result<()> {
    if v == EMPTY {
        return Err(Error::Config("0 marks an empty slot and cannot be stored".into()));
    }
    let h = vol.hash(v);
    let t = ctx.cas(v, EMPTY, owner, vol.slot(h))?;
    ctx.flush(owner)?;
    if ctx.value(t)? == EMPTY {
        return Ok(());
    }

    let idx = loop {
        let cur = ctx.get_sync(owner, vol.next_free())?;
        if cur as usize >= vol.heap {
            return Err(Error::Capacity("overflow heap is full"));
        }
        let t = ctx.cas(cur + 1, cur, owner, vol.next_free())?;
        ctx.flush(owner)?;
        if ctx.value(t)? == cur {
            break cur as usize;
        }
    };
    ctx.put(v, owner, vol.heap_value(idx))?;
    ctx.put(EMPTY, owner, vol.heap_next(idx))?;
    ctx.flush(owner)?;

    let link = idx as i64 + 1;
    let hint = ctx.get_sync(owner, vol.last(h))?;
    let mut cell = match hint {
        EMPTY => vol.first(h),
        l => vol.heap_next(l as usize - 1),
    };
    loop {
        let t = ctx.cas(link, EMPTY, owner, cell)?;
        ctx.flush(owner)?;
        match ctx.value(t)? {
            EMPTY => break,
            taken => cell = vol.heap_next(taken as usize - 1),
        }
    }
    // Only ever moves the hint forward: a stale hint fails the compare.
    let t = ctx.cas(link, hint, owner, vol.last(h))?;
    ctx.flush(owner)?;
    ctx.value(t)?;
    Ok(())
}

pub fn lookup(ctx: &mut RmaContext, vol: &VolumeLayout, owner: usize, v: i64) -> Result<bool> {
    if v == EMPTY {
        return Ok(false);
    }
    let h = vol.hash(v);
    if ctx.get_sync(owner, vol.slot(h))? == v {
        return Ok(true);
    }
    let mut link = ctx.get_sync(owner, vol.first(h))?;
    while link != EMPTY {
        let i = link as usize - 1;
        if ctx.get_sync(owner, vol.heap_value(i))? == v {
            return Ok(true);
        }
        link = ctx.get_sync(owner, vol.heap_next(i))?;
    }
    Ok(false)
}

/// Every value stored in the volume, read directly from the window. The
/// result is sorted. Fails if a chain is cyclic or links outside the heap.
pub fn contents(window: &Window, vol: &VolumeLayout, owner: usize) -> Result<Vec<i64>> {
    let mut out = Vec::new();
    let mut seen = vec![false; vol.heap];
    for h in 0..vol.table {
        let s = window.peek(owner, vol.slot(h))?;
        if s != EMPTY {
            out.push(s);
        }
        let mut link = window.peek(owner, vol.first(h))?;
        while link != EMPTY {
            let i = link as usize - 1;
            if i >= vol.heap || seen[i] {
                return Err(Error::Protocol("overflow chain is cyclic or dangling"));
            }
            seen[i] = true;
            out.push(window.peek(owner, vol.heap_value(i))?);
            link = window.peek(owner, vol.heap_next(i))?;
        }
    }
    out.sort_unstable();
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DhtOp {
    Insert(i64),
    Lookup(i64),
}

/// Sequential model: a multiset where inserts always succeed.
#[derive(Debug, Clone, Copy, Default)]
pub struct MultisetSpec;

impl SequentialSpec for MultisetSpec {
    type State = Vec<i64>;
    type Op = DhtOp;
    type Ret = bool;

    fn init(&self) -> Vec<i64> {
        Vec::new()
    }

    fn step(&self, state: &Vec<i64>, op: &DhtOp) -> (Vec<i64>, bool) {
        match *op {
            DhtOp::Insert(v) => {
                let mut next = state.clone();
                let at = next.partition_point(|&x| x < v);
                next.insert(at, v);
                (next, true)
            }
            DhtOp::Lookup(v) => (state.clone(), state.binary_search(&v).is_ok()),
        }
    }
}
