//! Post-hoc auditors over an event log. They are pure functions of the log
//! and the lock configuration.

use std::collections::{BTreeSet, HashMap};
use std::fmt;

use super::{Event, EventKind};
use crate::topology::{CounterMap, LockParams, TopologySpec};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    /// Sequence number of the first offending event.
    pub seq: u64,
    pub reason: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "seq {}: {}", self.seq, self.reason)
    }
}

impl std::error::Error for Violation {}

fn violation(seq: u64, reason: impl Into<String>) -> Violation {
    Violation {
        seq,
        reason: reason.into(),
    }
}

/// Readers and writers currently inside the critical section.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct OccupancyState {
    pub readers: usize,
    pub writers: usize,
}

impl OccupancyState {
    pub fn is_valid(&self) -> bool {
        self.writers <= 1 && (self.writers == 0 || self.readers == 0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Inside {
    No,
    Reading,
    Writing,
}

/// Replays the log and fails at the first event after which the critical
/// section holds two writers, or a writer together with readers. Also
/// rejects enter/exit events that do not alternate per rank.
pub fn audit_mutual_exclusion(events: &[Event]) -> Result<OccupancyState, Violation> {
    let mut occ = OccupancyState::default();
    let mut inside: HashMap<usize, Inside> = HashMap::new();
    let mut last_seq = 0;
    for e in events {
        if e.seq <= last_seq {
            return Err(violation(e.seq, "sequence numbers not increasing"));
        }
        last_seq = e.seq;
        let state = inside.entry(e.rank).or_insert(Inside::No);
        match e.kind {
            EventKind::ReadEnter | EventKind::WriteEnter => {
                if *state != Inside::No {
                    return Err(violation(e.seq, format!("rank {} entered twice", e.rank)));
                }
                if e.kind == EventKind::ReadEnter {
                    *state = Inside::Reading;
                    occ.readers += 1;
                } else {
                    *state = Inside::Writing;
                    occ.writers += 1;
                }
                if !occ.is_valid() {
                    return Err(violation(
                        e.seq,
                        format!(
                            "rank {} entered with {} writer(s) and {} reader(s) inside",
                            e.rank, occ.writers, occ.readers
                        ),
                    ));
                }
            }
            EventKind::ReadExit => {
                if *state != Inside::Reading {
                    return Err(violation(e.seq, format!("rank {} read-exit without read-enter", e.rank)));
                }
                *state = Inside::No;
                occ.readers -= 1;
            }
            EventKind::WriteExit => {
                if *state != Inside::Writing {
                    return Err(violation(e.seq, format!("rank {} write-exit without write-enter", e.rank)));
                }
                *state = Inside::No;
                occ.writers -= 1;
            }
            _ => {}
        }
    }
    Ok(occ)
}

/// Checks the fairness bounds implied by the thresholds:
///
/// * writer batches (writer entries between two hand-overs to the readers)
///   hold at most `T_W` entries whenever readers are waiting;
/// * between two resets of a physical counter, at most `T_R` readers of that
///   counter enter while a writer waits;
/// * for every level `i >= 2`, a run of consecutive writer entries from one
///   level-`i` element is at most `prod_{k>=i} T_L,k` long if, when the run
///   started, a writer from another element was already queued at the level
///   where the two elements meet.
///
/// The reader bounds apply only when `counters` is given (reader-writer lock).
#[derive(Debug, Clone)]
pub struct ThresholdAudit<'a> {
    pub params: &'a LockParams,
    pub topology: &'a TopologySpec,
    pub counters: Option<&'a CounterMap>,
}

impl ThresholdAudit<'_> {
    pub fn run(&self, events: &[Event]) -> Result<(), Violation> {
        if let Some(cm) = self.counters {
            self.writer_batches(events)?;
            self.reader_batches(events, cm)?;
        }
        for level in 2..=self.topology.levels() {
            self.locality(events, level)?;
        }
        Ok(())
    }

    fn writer_batches(&self, events: &[Event]) -> Result<(), Violation> {
        let limit = self.params.writer();
        let mut waiting_readers: BTreeSet<usize> = BTreeSet::new();
        let mut batch = 0i64;
        let mut readers_waited = false;
        for e in events {
            match e.kind {
                EventKind::ReadRequest => {
                    waiting_readers.insert(e.rank);
                }
                EventKind::ReadEnter => {
                    waiting_readers.remove(&e.rank);
                    batch = 0;
                    readers_waited = false;
                }
                EventKind::ModeChange => {
                    batch = 0;
                    readers_waited = false;
                }
                EventKind::WriteEnter => {
                    batch += 1;
                    readers_waited |= !waiting_readers.is_empty();
                    if batch > limit && readers_waited {
                        return Err(violation(
                            e.seq,
                            format!("writer batch of {batch} exceeds T_W = {limit} while readers wait"),
                        ));
                    }
                }
                _ => {}
            }
        }
        Ok(())
    }

    fn reader_batches(&self, events: &[Event], cm: &CounterMap) -> Result<(), Violation> {
        let limit = self.params.reader();
        let mut waiting_writers: BTreeSet<usize> = BTreeSet::new();
        let mut entries: HashMap<usize, i64> = HashMap::new();
        for e in events {
            match e.kind {
                EventKind::WriteRequest => {
                    waiting_writers.insert(e.rank);
                }
                EventKind::WriteEnter => {
                    waiting_writers.remove(&e.rank);
                }
                EventKind::CounterReset => {
                    entries.insert(e.element, 0);
                }
                EventKind::ReadEnter if !waiting_writers.is_empty() => {
                    let counter = cm.counter_index(e.rank);
                    let n = entries.entry(counter).or_insert(0);
                    *n += 1;
                    if *n > limit {
                        return Err(violation(
                            e.seq,
                            format!("{n} readers entered on counter {counter} since its reset (T_R = {limit})"),
                        ));
                    }
                }
                _ => {}
            }
        }
        Ok(())
    }

    fn locality(&self, events: &[Event], level: usize) -> Result<(), Violation> {
        let topo = self.topology;
        let bound = self.params.locality_product_from(level);
        // Per DQ level: ranks whose node entered the queue but is not head yet.
        let mut pending: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); topo.levels() + 1];
        let mut run_element = 0usize;
        let mut run_len = 0i64;
        let mut contended = false;
        for e in events {
            match e.kind {
                EventKind::QueueEnter => {
                    pending[e.level].insert(e.rank);
                }
                EventKind::QueueHead => {
                    pending[e.level].remove(&e.rank);
                }
                // Exclusive locks serve readers like writers; under the
                // reader-writer lock a reader batch ends the writers' run.
                EventKind::ReadEnter if self.counters.is_some() => {
                    run_element = 0;
                    run_len = 0;
                }
                EventKind::WriteEnter | EventKind::ReadEnter => {
                    let element = topo.element_of(e.rank, level).map_err(|err| violation(e.seq, err.to_string()))?;
                    if element == run_element {
                        run_len += 1;
                    } else {
                        run_element = element;
                        run_len = 1;
                        contended = (1..level).any(|m| {
                            pending[m].iter().any(|&q| topo.common_level(q, e.rank) == m)
                        });
                    }
                    if run_len > bound && contended {
                        return Err(violation(
                            e.seq,
                            format!(
                                "{run_len} consecutive writers from level-{level} element {element} \
                                 (bound {bound}) while another element was queued"
                            ),
                        ));
                    }
                }
                _ => {}
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use EventKind::*;

    fn log(spec: &[(usize, EventKind)]) -> Vec<Event> {
        spec.iter()
            .enumerate()
            .map(|(i, &(rank, kind))| Event::new(i as u64 + 1, rank, kind))
            .collect()
    }

    #[test]
    fn me_passes_on_clean_log() {
        let events = log(&[
            (1, WriteEnter),
            (1, WriteExit),
            (2, ReadEnter),
            (3, ReadEnter),
            (2, ReadExit),
            (3, ReadExit),
        ]);
        assert_eq!(audit_mutual_exclusion(&events), Ok(OccupancyState::default()));
    }

    #[test]
    fn me_fails_at_first_offence() {
        let events = log(&[(1, WriteEnter), (2, ReadEnter)]);
        assert_eq!(audit_mutual_exclusion(&events).unwrap_err().seq, 2);
        let events = log(&[(1, WriteEnter), (1, WriteExit), (2, WriteEnter), (3, WriteEnter)]);
        assert_eq!(audit_mutual_exclusion(&events).unwrap_err().seq, 4);
        let events = log(&[(2, ReadEnter), (1, WriteEnter)]);
        assert_eq!(audit_mutual_exclusion(&events).unwrap_err().seq, 2);
    }

    #[test]
    fn me_rejects_broken_alternation() {
        assert!(audit_mutual_exclusion(&log(&[(1, WriteExit)])).is_err());
        assert!(audit_mutual_exclusion(&log(&[(1, ReadEnter), (1, WriteExit)])).is_err());
        let mut events = log(&[(1, ReadEnter), (1, ReadExit)]);
        events[1].seq = 1;
        assert!(audit_mutual_exclusion(&events).is_err());
    }

    fn rw_audit<'a>(params: &'a LockParams, topo: &'a TopologySpec, cm: &'a CounterMap) -> ThresholdAudit<'a> {
        ThresholdAudit {
            params,
            topology: topo,
            counters: Some(cm),
        }
    }

    #[test]
    fn writer_batch_over_threshold_fails_when_readers_wait() {
        let params = LockParams::new(vec![2, 2], 8).unwrap();
        let topo = TopologySpec::new(8, &[2]).unwrap();
        let cm = CounterMap::new(8, 4).unwrap();
        let mut spec = vec![(8, ReadRequest)];
        for _ in 0..5 {
            spec.push((1, WriteEnter));
            spec.push((1, WriteExit));
        }
        let events = log(&spec);
        let err = rw_audit(&params, &topo, &cm).run(&events).unwrap_err();
        assert!(err.reason.contains("writer batch"), "{err}");

        // Same log, no reader ever waits.
        let events = log(&spec[1..]);
        assert!(rw_audit(&params, &topo, &cm).run(&events).is_ok());

        // A hand-over to the readers splits the batch.
        let mut split = spec.clone();
        split.insert(7, (1, ModeChange));
        assert!(rw_audit(&params, &topo, &cm).run(&log(&split)).is_ok());
    }

    #[test]
    fn reader_batch_bound() {
        let params = LockParams::new(vec![1], 2).unwrap();
        let topo = TopologySpec::flat(4).unwrap();
        let cm = CounterMap::new(4, 4).unwrap();
        let spec = [(4, WriteRequest), (1, ReadEnter), (2, ReadEnter), (3, ReadEnter)];
        let err = rw_audit(&params, &topo, &cm).run(&log(&spec)).unwrap_err();
        assert_eq!(err.seq, 4);
        let mut events = log(&spec);
        events.insert(2, Event::new(0, 1, CounterReset).at(0, 1));
        for (i, e) in events.iter_mut().enumerate() {
            e.seq = i as u64 + 1;
        }
        assert!(rw_audit(&params, &topo, &cm).run(&events).is_ok());
        // Without a waiting writer the readers are not limited.
        assert!(rw_audit(&params, &topo, &cm).run(&log(&spec[1..])).is_ok());
    }

    #[test]
    fn locality_run_bound() {
        // Two nodes of two ranks; T_L,2 = 2.
        let params = LockParams::new(vec![1, 2], 1).unwrap();
        let topo = TopologySpec::new(4, &[2]).unwrap();
        let audit = ThresholdAudit {
            params: &params,
            topology: &topo,
            counters: None,
        };
        let queued = Event::new(1, 3, QueueEnter).at(1, 1);
        let mut events = vec![queued];
        for (i, rank) in [1, 2, 1].into_iter().enumerate() {
            events.push(Event::new(i as u64 * 2 + 2, rank, WriteEnter));
            events.push(Event::new(i as u64 * 2 + 3, rank, WriteExit));
        }
        let err = audit.run(&events).unwrap_err();
        assert!(err.reason.contains("consecutive"), "{err}");
        // Nobody from node 2 queued: long runs are fine.
        assert!(audit.run(&events[1..]).is_ok());
        // Node 2's node became head before the run started.
        let mut served = vec![queued, Event::new(2, 3, QueueHead).at(1, 1)];
        for (i, e) in events[1..].iter().enumerate() {
            served.push(Event { seq: i as u64 + 3, ..*e });
        }
        assert!(audit.run(&served).is_ok());
    }
}
