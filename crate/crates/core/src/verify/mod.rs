//! Correctness instrumentation: the event log, post-hoc auditors, a
//! linearizability oracle and the quiescence check.

mod audit;
mod linearizability;
mod log;

pub use audit::{audit_mutual_exclusion, OccupancyState, ThresholdAudit, Violation};
pub use linearizability::{linearizability_check, CellSpec, HistoryClock, Operation, SequentialSpec, MAX_OPS};
pub use log::{parse_dump, Event, EventKind, EventLog};

use crate::lock::{SENTINEL, WAIT};
use crate::rma::{Window, EMPTY};
use crate::topology::{CounterMap, WindowLayout};

/// Checks that no process is inside any lock protocol: every TAIL and NEXT
/// is empty, no STATUS still says WAIT, the spin word is free, and every
/// physical counter reads (0, 0).
pub fn check_quiescence(window: &Window, layout: &WindowLayout, counters: Option<&CounterMap>) -> Result<(), String> {
    check_rest(window, layout, counters, true)
}

/// Like [`check_quiescence`], but counters only need to be in READ mode with
/// as many departures as arrivals: where readers leave them.
pub fn check_settled(window: &Window, layout: &WindowLayout, counters: Option<&CounterMap>) -> Result<(), String> {
    check_rest(window, layout, counters, false)
}

fn check_rest(
    window: &Window,
    layout: &WindowLayout,
    counters: Option<&CounterMap>,
    zeroed: bool,
) -> Result<(), String> {
    let cell = |rank, offset| window.peek(rank, offset).map_err(|e| e.to_string());
    for rank in 1..=window.procs() {
        for level in 1..=layout.levels() {
            let tail = cell(rank, layout.tail(level))?;
            if tail != EMPTY {
                return Err(format!("TAIL[{level}] at rank {rank} holds {tail}"));
            }
            let next = cell(rank, layout.next(level))?;
            if next != EMPTY {
                return Err(format!("NEXT[{level}] at rank {rank} holds {next}"));
            }
            if cell(rank, layout.status(level))? == WAIT {
                return Err(format!("STATUS[{level}] at rank {rank} still WAIT"));
            }
        }
        let spin = cell(rank, layout.spin())?;
        if spin != 0 {
            return Err(format!("spin word at rank {rank} holds {spin}"));
        }
    }
    if let Some(cm) = counters {
        for host in cm.hosts() {
            let arrive = cell(host, layout.arrive())?;
            let depart = cell(host, layout.depart())?;
            if arrive >= SENTINEL || arrive != depart || (zeroed && arrive != 0) {
                return Err(format!("counter at rank {host} reads ({arrive}, {depart})"));
            }
        }
    }
    Ok(())
}
