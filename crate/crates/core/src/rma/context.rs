use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{AccOp, RmaOp, Scheduler, Window};
use crate::error::{Error, Result};
use crate::verify::{EventKind, EventLog};

/// Handle for a value-producing call. The value may only be read through
/// [`RmaContext::value`] after the matching [`RmaContext::flush`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[must_use]
pub struct OpTicket {
    origin: usize,
    target: usize,
    value: i64,
    epoch: u64,
}

impl OpTicket {
    pub fn origin(&self) -> usize {
        self.origin
    }

    pub fn target(&self) -> usize {
        self.target
    }
}

/// Per-kind call counts issued by one context.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct OpStats {
    pub put: u64,
    pub get: u64,
    pub accumulate: u64,
    pub fao: u64,
    pub cas: u64,
    pub flush: u64,
}

impl OpStats {
    /// Calls that touch the window (flushes excluded).
    pub fn calls(&self) -> u64 {
        self.put + self.get + self.accumulate + self.fao + self.cas
    }
}

/// One simulated process: its rank, its view of the window and its clock.
#[derive(Debug)]
pub struct RmaContext {
    rank: usize,
    window: Arc<Window>,
    sched: Option<Arc<Scheduler>>,
    log: Option<Arc<EventLog>>,
    clock: u64,
    wall: Option<(Instant, bool)>,
    issued: Vec<u64>,
    flushed: Vec<u64>,
    rng: ChaCha8Rng,
    stats: OpStats,
}

impl RmaContext {
    pub fn new(window: Arc<Window>, rank: usize) -> Result<Self> {
        if rank == 0 || rank > window.procs() {
            return Err(Error::Address { rank, offset: 0 });
        }
        let procs = window.procs();
        Ok(Self {
            rank,
            window,
            sched: None,
            log: None,
            clock: 0,
            wall: None,
            issued: vec![0; procs],
            flushed: vec![0; procs],
            rng: ChaCha8Rng::seed_from_u64(rank as u64),
            stats: OpStats::default(),
        })
    }

    /// Runs this context under the deterministic scheduler.
    pub fn with_scheduler(mut self, sched: Arc<Scheduler>) -> Self {
        self.sched = Some(sched);
        self
    }

    pub fn with_log(mut self, log: Arc<EventLog>) -> Self {
        self.log = Some(log);
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ self.rank as u64);
        self
    }

    /// Reports real time from `start`; with `busy_wait` the simulated
    /// latencies are also spent spinning.
    pub fn with_wallclock(mut self, start: Instant, busy_wait: bool) -> Self {
        self.wall = Some((start, busy_wait));
        self
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn window(&self) -> &Arc<Window> {
        &self.window
    }

    pub fn stats(&self) -> OpStats {
        self.stats
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    pub fn is_scheduled(&self) -> bool {
        self.sched.is_some()
    }

    /// Current time in nanoseconds: virtual unless running on the wall clock.
    pub fn now(&self) -> u64 {
        match self.wall {
            Some((start, _)) => start.elapsed().as_nanos() as u64,
            None => self.clock,
        }
    }

    /// Waits for the first turn. Needed only in scheduled mode.
    pub fn start(&mut self) -> Result<()> {
        if let Some(s) = &self.sched {
            s.enter(self.rank)?;
        }
        Ok(())
    }

    /// Leaves the run; other ranks no longer wait for this one.
    pub fn finish(&mut self) {
        if let Some(s) = &self.sched {
            s.exit(self.rank);
        }
    }

    fn charge(&mut self, cost: u64, target: Option<usize>) -> Result<()> {
        if self.window.is_aborted() {
            return Err(Error::Aborted);
        }
        match &self.sched {
            Some(s) => {
                let service = self.window.latency().map_or(0, |m| m.service());
                self.clock = s.advance(self.rank, cost, target.map(|t| (t, service)))?;
            }
            None => {
                self.clock += cost;
                if let Some((_, true)) = self.wall {
                    let until = Instant::now() + Duration::from_nanos(cost);
                    while Instant::now() < until {
                        std::hint::spin_loop();
                    }
                }
            }
        }
        Ok(())
    }

    fn issue(&mut self, op: RmaOp, target: usize, offset: usize) -> Result<OpTicket> {
        let mut cost = self.window.delay(self.rank, target);
        if let Some(jitter) = self.window.latency().map(|m| m.jitter()).filter(|&j| j > 0) {
            cost += self.rng.gen_range(0..=jitter);
        }
        if target == 0 || target > self.window.procs() {
            return Err(Error::Address { rank: target, offset });
        }
        self.charge(cost, Some(target))?;
        let value = self.window.apply(op, target, offset)?;
        if let Some(s) = &self.sched {
            if op.step(value).0 != value {
                s.notify(target, offset, self.clock);
            }
        }
        match op {
            RmaOp::Put(_) => self.stats.put += 1,
            RmaOp::Get => self.stats.get += 1,
            RmaOp::Accumulate(..) => self.stats.accumulate += 1,
            RmaOp::Fao(..) => self.stats.fao += 1,
            RmaOp::Cas { .. } => self.stats.cas += 1,
        }
        self.issued[target - 1] += 1;
        Ok(OpTicket {
            origin: self.rank,
            target,
            value,
            epoch: self.issued[target - 1],
        })
    }

    /// Places `value` at `(target, offset)`.
    pub fn put(&mut self, value: i64, target: usize, offset: usize) -> Result<()> {
        self.issue(RmaOp::Put(value), target, offset).map(|_| ())
    }

    pub fn get(&mut self, target: usize, offset: usize) -> Result<OpTicket> {
        self.issue(RmaOp::Get, target, offset)
    }

    pub fn accumulate(&mut self, operand: i64, target: usize, offset: usize, op: AccOp) -> Result<()> {
        self.issue(RmaOp::Accumulate(operand, op), target, offset).map(|_| ())
    }

    /// Fetch-and-op: applies `op` and returns the previous value.
    pub fn fao(&mut self, operand: i64, target: usize, offset: usize, op: AccOp) -> Result<OpTicket> {
        self.issue(RmaOp::Fao(operand, op), target, offset)
    }

    /// Replaces the cell with `src` if it equals `cmp`; returns the previous value.
    pub fn cas(&mut self, src: i64, cmp: i64, target: usize, offset: usize) -> Result<OpTicket> {
        self.issue(RmaOp::Cas { src, cmp }, target, offset)
    }

    /// Completes every call issued toward `target`.
    pub fn flush(&mut self, target: usize) -> Result<()> {
        if target == 0 || target > self.window.procs() {
            return Err(Error::Address { rank: target, offset: 0 });
        }
        self.stats.flush += 1;
        self.flushed[target - 1] = self.issued[target - 1];
        Ok(())
    }

    /// Value of a completed ticket. In strict mode reading before the flush
    /// is an error.
    pub fn value(&self, ticket: OpTicket) -> Result<i64> {
        if ticket.origin != self.rank {
            return Err(Error::Protocol("ticket read by a context that did not issue it"));
        }
        if self.window.is_strict() && self.flushed[ticket.target - 1] < ticket.epoch {
            return Err(Error::Unflushed { target: ticket.target });
        }
        Ok(ticket.value)
    }

    /// Get, flush, read.
    pub fn get_sync(&mut self, target: usize, offset: usize) -> Result<i64> {
        let t = self.get(target, offset)?;
        self.flush(target)?;
        self.value(t)
    }

    /// Reads `cells`, each `(target, offset)`, until `done` accepts their
    /// values, and returns those values.
    ///
    /// Under the scheduler the context parks between reads until another
    /// process changes one of the cells, which behaves like polling with no
    /// gap. Otherwise it polls with exponential backoff capped at `cap` ns.
    pub fn wait_until(
        &mut self,
        cells: &[(usize, usize)],
        cap: u64,
        mut done: impl FnMut(&[i64]) -> bool,
    ) -> Result<Vec<i64>> {
        let mut delay = 16u64.min(cap);
        loop {
            if let Some(s) = &self.sched {
                s.arm(self.rank, cells);
            }
            let mut tickets = Vec::with_capacity(cells.len());
            for &(target, offset) in cells {
                tickets.push(self.get(target, offset)?);
            }
            for (i, &(target, _)) in cells.iter().enumerate() {
                if !cells[..i].iter().any(|&(t, _)| t == target) {
                    self.flush(target)?;
                }
            }
            let values = tickets.into_iter().map(|t| self.value(t)).collect::<Result<Vec<_>>>()?;
            if done(&values) {
                if let Some(s) = &self.sched {
                    s.disarm(self.rank);
                }
                return Ok(values);
            }
            match &self.sched {
                Some(s) => self.clock = s.park(self.rank)?,
                None => {
                    self.pause(delay)?;
                    delay = (delay * 2).min(cap);
                }
            }
        }
    }

    /// Local work that takes `ns` of simulated time.
    pub fn compute(&mut self, ns: u64) -> Result<()> {
        self.charge(ns, None)
    }

    /// Backoff between polls: simulated idle time, plus a yield when free running.
    pub fn pause(&mut self, ns: u64) -> Result<()> {
        self.charge(ns, None)?;
        if self.sched.is_none() {
            std::thread::yield_now();
        }
        Ok(())
    }

    pub fn record(&self, kind: EventKind, level: usize, element: usize) {
        if let Some(log) = &self.log {
            log.record(self.rank, self.now(), kind, level, element);
        }
    }

    pub fn log(&self) -> Option<&Arc<EventLog>> {
        self.log.as_ref()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rma::LatencyModel;
    use crate::topology::TopologySpec;

    fn ctx(procs: usize, words: usize) -> RmaContext {
        RmaContext::new(Arc::new(Window::new(procs, words, None).unwrap()), 1).unwrap()
    }

    #[test]
    fn put_then_get_after_flush() {
        let mut c = ctx(2, 4);
        c.put(5, 2, 0).unwrap();
        c.flush(2).unwrap();
        assert_eq!(c.window().peek(2, 0).unwrap(), 5);
        assert_eq!(c.get_sync(2, 0).unwrap(), 5);
        c.put(0, 1, 0).unwrap();
        c.flush(1).unwrap();
        assert_eq!(c.get_sync(1, 0).unwrap(), crate::rma::EMPTY);
        assert_eq!(c.get_sync(2, 3).unwrap(), 0);
    }

    #[test]
    fn atomics_examples() {
        let mut c = ctx(1, 1);
        c.window().poke(1, 0, 5).unwrap();
        c.accumulate(-3, 1, 0, AccOp::Sum).unwrap();
        c.flush(1).unwrap();
        assert_eq!(c.window().peek(1, 0).unwrap(), 2);
        c.accumulate(7, 1, 0, AccOp::Replace).unwrap();
        c.flush(1).unwrap();
        assert_eq!(c.window().peek(1, 0).unwrap(), 7);

        c.window().poke(1, 0, 10).unwrap();
        let t = c.fao(1, 1, 0, AccOp::Sum).unwrap();
        c.flush(1).unwrap();
        assert_eq!(c.value(t).unwrap(), 10);
        assert_eq!(c.window().peek(1, 0).unwrap(), 11);

        c.window().poke(1, 0, 0).unwrap();
        let t = c.fao(1, 1, 0, AccOp::Replace).unwrap();
        c.flush(1).unwrap();
        assert_eq!(c.value(t).unwrap(), crate::rma::EMPTY);
        assert_eq!(c.window().peek(1, 0).unwrap(), 1);

        c.window().poke(1, 0, 0).unwrap();
        let t = c.cas(4, 0, 1, 0).unwrap();
        c.flush(1).unwrap();
        assert_eq!((c.value(t).unwrap(), c.window().peek(1, 0).unwrap()), (0, 4));
        c.window().poke(1, 0, 9).unwrap();
        let t = c.cas(4, 0, 1, 0).unwrap();
        c.flush(1).unwrap();
        assert_eq!((c.value(t).unwrap(), c.window().peek(1, 0).unwrap()), (9, 9));
        // Tail retraction: the caller is still the tail.
        c.window().poke(1, 0, 1).unwrap();
        let t = c.cas(crate::rma::EMPTY, 1, 1, 0).unwrap();
        c.flush(1).unwrap();
        assert_eq!((c.value(t).unwrap(), c.window().peek(1, 0).unwrap()), (1, 0));
    }

    #[test]
    fn strict_mode_rejects_unflushed_reads() {
        let mut c = ctx(2, 1);
        let t = c.get(2, 0).unwrap();
        assert_eq!(c.value(t), Err(Error::Unflushed { target: 2 }));
        // A flush toward a different target does not complete it.
        c.flush(1).unwrap();
        assert_eq!(c.value(t), Err(Error::Unflushed { target: 2 }));
        c.flush(2).unwrap();
        assert_eq!(c.value(t), Ok(0));
        // Flushing with nothing pending is a no-op.
        c.flush(2).unwrap();
    }

    #[test]
    fn relaxed_mode_returns_same_values() {
        let w = Arc::new(Window::new(1, 1, None).unwrap().relaxed());
        w.poke(1, 0, 3).unwrap();
        let mut c = RmaContext::new(w, 1).unwrap();
        let t = c.fao(2, 1, 0, AccOp::Sum).unwrap();
        assert_eq!(c.value(t), Ok(3));
        c.flush(1).unwrap();
        assert_eq!(c.value(t), Ok(3));
    }

    #[test]
    fn foreign_tickets_rejected() {
        let w = Arc::new(Window::new(2, 1, None).unwrap());
        let mut a = RmaContext::new(w.clone(), 1).unwrap();
        let b = RmaContext::new(w, 2).unwrap();
        let t = a.get(1, 0).unwrap();
        a.flush(1).unwrap();
        assert!(matches!(b.value(t), Err(Error::Protocol(_))));
    }

    #[test]
    fn virtual_clock_charges_latency_on_issue() {
        let topo = TopologySpec::new(64, &[4]).unwrap();
        let model = LatencyModel::uniform(topo, 100, 1000);
        let w = Arc::new(Window::new(64, 2, Some(model)).unwrap());
        let mut c = RmaContext::new(w, 1).unwrap();
        c.get_sync(2, 0).unwrap();
        assert_eq!(c.now(), 100);
        let t = c.get(40, 0).unwrap();
        assert_eq!(c.now(), 1100);
        c.flush(40).unwrap();
        assert_eq!(c.now(), 1100);
        c.value(t).unwrap();
        assert_eq!(c.stats().get, 2);
    }
}
