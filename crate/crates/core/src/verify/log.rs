use std::fmt;
use std::io::{self, Write};
use std::str::FromStr;
use std::sync::Mutex;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EventKind {
    ReadRequest,
    ReadEnter,
    ReadExit,
    WriteRequest,
    WriteEnter,
    WriteExit,
    /// A physical counter was reset; `element` is the counter index.
    CounterReset,
    /// A writer handed the lock to the readers.
    ModeChange,
    /// A queue node entered the DQ at `level` (after its tail swap).
    QueueEnter,
    /// A queue node became the head of the DQ at `level`.
    QueueHead,
}

impl EventKind {
    pub fn name(self) -> &'static str {
        match self {
            EventKind::ReadRequest => "read-request",
            EventKind::ReadEnter => "read-enter",
            EventKind::ReadExit => "read-exit",
            EventKind::WriteRequest => "write-request",
            EventKind::WriteEnter => "write-enter",
            EventKind::WriteExit => "write-exit",
            EventKind::CounterReset => "counter-reset",
            EventKind::ModeChange => "mode-change",
            EventKind::QueueEnter => "queue-enter",
            EventKind::QueueHead => "queue-head",
        }
    }
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EventKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        use EventKind::*;
        [
            ReadRequest,
            ReadEnter,
            ReadExit,
            WriteRequest,
            WriteEnter,
            WriteExit,
            CounterReset,
            ModeChange,
            QueueEnter,
            QueueHead,
        ]
        .into_iter()
        .find(|k| k.name() == s)
        .ok_or_else(|| format!("unknown event kind {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Event {
    pub seq: u64,
    pub time: u64,
    pub rank: usize,
    pub kind: EventKind,
    pub level: usize,
    pub element: usize,
}

impl Event {
    /// Builds an event by hand, mostly for auditor tests.
    pub fn new(seq: u64, rank: usize, kind: EventKind) -> Self {
        Self {
            seq,
            time: 0,
            rank,
            kind,
            level: 0,
            element: 0,
        }
    }

    pub fn at(mut self, level: usize, element: usize) -> Self {
        self.level = level;
        self.element = element;
        self
    }
}

/// Append-only, globally ordered event record.
///
/// Appends are serialised by one lock, so log order equals sequence order.
#[derive(Debug, Default)]
pub struct EventLog {
    events: Mutex<Vec<Event>>,
}

impl EventLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&self, rank: usize, time: u64, kind: EventKind, level: usize, element: usize) -> u64 {
        let mut events = self.events.lock().unwrap_or_else(|e| e.into_inner());
        let seq = events.len() as u64 + 1;
        events.push(Event {
            seq,
            time,
            rank,
            kind,
            level,
            element,
        });
        seq
    }

    pub fn len(&self) -> usize {
        self.events.lock().unwrap_or_else(|e| e.into_inner()).len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn snapshot(&self) -> Vec<Event> {
        self.events.lock().unwrap_or_else(|e| e.into_inner()).clone()
    }

    /// Writes newline-delimited `seq,rank,event,level,element` records.
    pub fn dump<W: Write>(&self, mut out: W) -> io::Result<()> {
        for e in self.snapshot() {
            writeln!(out, "{},{},{},{},{}", e.seq, e.rank, e.kind, e.level, e.element)?;
        }
        Ok(())
    }
}

/// Parses a dump produced by [`EventLog::dump`]. Times are not part of the
/// dump and come back as zero.
pub fn parse_dump(text: &str) -> Result<Vec<Event>, String> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|line| {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 5 {
                return Err(format!("malformed record {line:?}"));
            }
            let num = |s: &str| s.trim().parse::<u64>().map_err(|e| format!("{line:?}: {e}"));
            Ok(Event {
                seq: num(f[0])?,
                time: 0,
                rank: num(f[1])? as usize,
                kind: f[2].trim().parse()?,
                level: num(f[3])? as usize,
                element: num(f[4])? as usize,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Arc;

    #[test]
    fn first_event_gets_seq_one() {
        let log = EventLog::new();
        assert_eq!(log.record(3, 0, EventKind::WriteEnter, 0, 0), 1);
        assert_eq!(log.record(3, 0, EventKind::WriteExit, 0, 0), 2);
    }

    #[test]
    fn concurrent_appends_get_distinct_seqs() {
        let log = Arc::new(EventLog::new());
        let hs: Vec<_> = (1..=4)
            .map(|r| {
                let log = log.clone();
                std::thread::spawn(move || {
                    for _ in 0..1000 {
                        log.record(r, 0, EventKind::ReadEnter, 0, 0);
                    }
                })
            })
            .collect();
        for h in hs {
            h.join().unwrap();
        }
        let seqs: Vec<u64> = log.snapshot().iter().map(|e| e.seq).collect();
        assert_eq!(seqs, (1..=4000).collect::<Vec<_>>());
    }

    #[test]
    fn million_appends_stay_monotone() {
        let log = EventLog::new();
        for i in 0..1_000_000u64 {
            log.record(1, i, EventKind::QueueEnter, 1, 1);
        }
        let events = log.snapshot();
        assert_eq!(events.len(), 1_000_000);
        assert!(events.windows(2).all(|w| w[0].seq < w[1].seq));
    }

    #[test]
    fn dump_round_trips() {
        let log = EventLog::new();
        log.record(2, 5, EventKind::CounterReset, 0, 3);
        log.record(1, 6, EventKind::QueueHead, 2, 1);
        let mut buf = Vec::new();
        log.dump(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "1,2,counter-reset,0,3\n2,1,queue-head,2,1\n");
        let parsed = parse_dump(&text).unwrap();
        assert_eq!(parsed[0], Event::new(1, 2, EventKind::CounterReset).at(0, 3));
        assert!(parse_dump("1,2,bogus,0,0").is_err());
    }
}
