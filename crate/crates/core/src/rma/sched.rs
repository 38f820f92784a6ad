//! Deterministic virtual-time scheduler.
//!
//! Exactly one rank runs at a time: the active rank with the smallest
//! `(clock, rank)`. A rank that issues a call advances its clock to the
//! call's completion time and then waits until it is the earliest again, so
//! calls land on the window in virtual-time order and a run is a pure
//! function of its configuration and seed.
//!
//! A rank waiting for window cells to change can park instead of polling.
//! A write that changes one of those cells reactivates it at the time of the
//! write. If every remaining rank is parked, nothing can ever change again
//! and the run is reported as deadlocked.

use std::sync::{Condvar, Mutex, MutexGuard};

use crate::error::{Error, Result};

#[derive(Debug)]
struct State {
    clocks: Vec<u64>,
    active: Vec<bool>,
    current: Option<usize>,
    /// Virtual time at which each target finishes its queued calls.
    busy: Vec<u64>,
    /// Cells each parked rank waits on.
    watching: Vec<Vec<(usize, usize)>>,
    aborted: bool,
    deadlocked: bool,
}

impl State {
    fn failure(&self) -> Error {
        if self.deadlocked {
            Error::Deadlock
        } else {
            Error::Aborted
        }
    }

    fn deadlock(&mut self, wake: &[Condvar]) {
        self.aborted = true;
        self.deadlocked = true;
        for c in wake {
            c.notify_all();
        }
    }
}

impl State {
    fn earliest(&self) -> Option<usize> {
        (0..self.clocks.len())
            .filter(|&i| self.active[i])
            .min_by_key(|&i| (self.clocks[i], i))
    }
}

#[derive(Debug)]
pub struct Scheduler {
    state: Mutex<State>,
    wake: Vec<Condvar>,
}

impl Scheduler {
    pub fn new(procs: usize) -> Self {
        Self {
            state: Mutex::new(State {
                clocks: vec![0; procs],
                active: vec![true; procs],
                current: if procs > 0 { Some(0) } else { None },
                busy: vec![0; procs],
                watching: vec![Vec::new(); procs],
                aborted: false,
                deadlocked: false,
            }),
            wake: (0..procs).map(|_| Condvar::new()).collect(),
        }
    }

    fn lock(&self) -> MutexGuard<'_, State> {
        self.state.lock().unwrap_or_else(|e| e.into_inner())
    }

    fn wait_turn<'a>(&'a self, mut st: MutexGuard<'a, State>, idx: usize) -> Result<MutexGuard<'a, State>> {
        while st.current != Some(idx) {
            if st.aborted {
                return Err(st.failure());
            }
            st = self.wake[idx].wait(st).unwrap_or_else(|e| e.into_inner());
        }
        if st.aborted {
            return Err(st.failure());
        }
        Ok(st)
    }

    /// Blocks until rank `rank` holds the turn.
    pub fn enter(&self, rank: usize) -> Result<()> {
        let st = self.lock();
        self.wait_turn(st, rank - 1).map(|_| ())
    }

    /// Charges a call (or local work, with `target == None`) and waits for the
    /// turn at the new clock. Returns the new clock.
    pub fn advance(&self, rank: usize, cost: u64, target: Option<(usize, u64)>) -> Result<u64> {
        let idx = rank - 1;
        let mut st = self.lock();
        if st.aborted {
            return Err(st.failure());
        }
        debug_assert_eq!(st.current, Some(idx), "rank {rank} advanced out of turn");
        let mut done = st.clocks[idx] + cost.max(1);
        if let Some((t, service)) = target {
            if service > 0 {
                let start = done.max(st.busy[t - 1]);
                done = start + service;
                st.busy[t - 1] = done;
            }
        }
        st.clocks[idx] = done;
        let next = st.earliest();
        if next != Some(idx) {
            st.current = next;
            if let Some(n) = next {
                self.wake[n].notify_one();
            }
            st = self.wait_turn(st, idx)?;
        }
        Ok(st.clocks[idx])
    }

    /// Starts watching `cells`, given as `(target, offset)`, without giving
    /// up the turn. Arm before reading the cells so no change is missed.
    pub fn arm(&self, rank: usize, cells: &[(usize, usize)]) {
        self.lock().watching[rank - 1] = cells.to_vec();
    }

    pub fn disarm(&self, rank: usize) {
        self.lock().watching[rank - 1].clear();
    }

    /// Parks `rank` until one of its armed cells changes. Returns at once if
    /// one already has. Returns the clock at wake-up.
    pub fn park(&self, rank: usize) -> Result<u64> {
        let idx = rank - 1;
        let mut st = self.lock();
        if st.aborted {
            return Err(st.failure());
        }
        debug_assert_eq!(st.current, Some(idx), "rank {rank} parked out of turn");
        if st.watching[idx].is_empty() {
            return Ok(st.clocks[idx]);
        }
        st.active[idx] = false;
        st.current = st.earliest();
        match st.current {
            Some(n) => self.wake[n].notify_one(),
            None => {
                st.deadlock(&self.wake);
                return Err(Error::Deadlock);
            }
        }
        st = self.wait_turn(st, idx)?;
        Ok(st.clocks[idx])
    }

    pub fn watch(&self, rank: usize, cells: &[(usize, usize)]) -> Result<u64> {
        self.arm(rank, cells);
        self.park(rank)
    }

    /// Called by the running rank after its call at `time` changed
    /// `(target, offset)`.
    pub fn notify(&self, target: usize, offset: usize, time: u64) {
        let mut st = self.lock();
        for r in 0..st.clocks.len() {
            if st.watching[r].contains(&(target, offset)) {
                st.watching[r].clear();
                if !st.active[r] {
                    st.active[r] = true;
                    st.clocks[r] = st.clocks[r].max(time);
                }
            }
        }
    }

    /// Removes `rank` from the run and hands the turn on.
    pub fn exit(&self, rank: usize) {
        let idx = rank - 1;
        let mut st = self.lock();
        if !st.active[idx] {
            return;
        }
        st.active[idx] = false;
        st.watching[idx].clear();
        if st.current == Some(idx) || st.current.is_none() {
            st.current = st.earliest();
            match st.current {
                Some(n) => self.wake[n].notify_one(),
                // The last running rank left others parked for good.
                None if st.watching.iter().any(|w| !w.is_empty()) => st.deadlock(&self.wake),
                None => {}
            }
        }
    }

    pub fn abort(&self) {
        let mut st = self.lock();
        st.aborted = true;
        for c in &self.wake {
            c.notify_all();
        }
    }

    pub fn clock(&self, rank: usize) -> u64 {
        self.lock().clocks[rank - 1]
    }

    /// Largest clock over all ranks.
    pub fn horizon(&self) -> u64 {
        self.lock().clocks.iter().copied().max().unwrap_or(0)
    }
}
