//! Microbenchmarks, the hashtable workload and the CLI driver.
//!
//! Every benchmark spawns one thread per rank. In virtual-clock mode the
//! threads run under a [`Scheduler`] so a run is a pure function of its
//! configuration; in free-running and wall-clock modes they race for real.

mod cli;
mod spin;

use std::io::Write;
use std::sync::mpsc;
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use rand::Rng;

pub use cli::{run_cli, Cli};
pub use spin::SpinHandle;

use crate::dht::{self, DhtMode, VolumeLayout};
use crate::error::{Error, Result};
use crate::lock::{LockConfig, LockHandle, LockKind};
use crate::rma::{AccOp, LatencyModel, OpStats, RmaContext, Scheduler, Window};
use crate::topology::{CounterMap, LockParams, Role, TopologySpec, WorkloadSpec};
use crate::verify::{audit_mutual_exclusion, check_quiescence, check_settled, EventKind, EventLog, ThresholdAudit};

/// Share of the first samples each process discards.
pub const WARMUP_FRACTION: f64 = 0.10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, clap::ValueEnum)]
pub enum BenchKind {
    /// Latency of one acquire plus release.
    Lb,
    /// Throughput with an empty critical section.
    Ecsb,
    /// One memory access in the critical section.
    Sob,
    /// Shared counter increment plus 1-4 us of work in the critical section.
    Wcsb,
    /// 1-4 us of work after every release.
    Warb,
    /// Hashtable inserts and lookups on one rank's volume.
    Dht,
}

impl BenchKind {
    pub fn name(self) -> &'static str {
        match self {
            BenchKind::Lb => "lb",
            BenchKind::Ecsb => "ecsb",
            BenchKind::Sob => "sob",
            BenchKind::Wcsb => "wcsb",
            BenchKind::Warb => "warb",
            BenchKind::Dht => "dht",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClockMode {
    /// Deterministic virtual time.
    Virtual,
    /// Real threads, virtual per-process clocks.
    Free,
    /// Real threads, real time; optionally burn the simulated latency.
    Wall { busy_wait: bool },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LatencyConfig {
    pub intra: u64,
    pub inter: u64,
    pub service: u64,
    pub jitter: u64,
}

impl Default for LatencyConfig {
    fn default() -> Self {
        Self {
            intra: 100,
            inter: 1000,
            service: 20,
            jitter: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DhtConfig {
    pub mode: DhtMode,
    pub table_size: usize,
    pub heap_size: usize,
}

impl Default for DhtConfig {
    fn default() -> Self {
        Self {
            mode: DhtMode::Rw,
            table_size: 1024,
            heap_size: 1024,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    pub bench: BenchKind,
    pub lock: LockKind,
    pub topology: TopologySpec,
    /// Counter stride `T_DC`.
    pub tdc: usize,
    /// `T_L,i` for levels 1..=N.
    pub locality: Vec<i64>,
    /// `T_R`.
    pub reader: i64,
    /// `F_W`.
    pub writer_fraction: f64,
    pub iterations: usize,
    pub seed: u64,
    pub latency: LatencyConfig,
    pub mode: ClockMode,
    /// Record events and audit the run.
    pub audit: bool,
    pub dht: DhtConfig,
    pub watchdog: Duration,
    /// Test hook: this rank enters the critical section without the lock.
    pub skip_lock_rank: Option<usize>,
}

impl BenchConfig {
    /// Defaults: counters per leaf element, every `T_L,i` = 4, `T_R` = 8,
    /// `F_W` = 25%, 10,000 iterations.
    pub fn new(bench: BenchKind, lock: LockKind, topology: TopologySpec) -> Self {
        let levels = topology.levels();
        let tdc = topology.block_size(levels).unwrap_or(1);
        Self {
            bench,
            lock,
            topology,
            tdc,
            locality: vec![4; levels],
            reader: 8,
            writer_fraction: 0.25,
            iterations: 10_000,
            seed: 1,
            latency: LatencyConfig::default(),
            mode: ClockMode::Virtual,
            audit: false,
            dht: DhtConfig::default(),
            watchdog: Duration::from_secs(60),
            skip_lock_rank: None,
        }
    }

    pub fn procs(&self) -> usize {
        self.topology.procs()
    }

    /// The lock actually used, which for the hashtable follows the mode.
    pub fn effective_lock(&self) -> Option<LockKind> {
        match (self.bench, self.dht.mode) {
            (BenchKind::Dht, DhtMode::Atomics) => None,
            (BenchKind::Dht, DhtMode::Rw) => Some(LockKind::Rmarw),
            (BenchKind::Dht, DhtMode::Mcs) => Some(LockKind::Rmamcs),
            _ => Some(self.lock),
        }
    }

    fn lock_label(&self) -> &'static str {
        match self.bench {
            BenchKind::Dht => self.dht.mode.name(),
            _ => self.lock.name(),
        }
    }

    pub fn warmup(&self) -> usize {
        (self.iterations as f64 * WARMUP_FRACTION).floor() as usize
    }

    fn latency_model(&self) -> LatencyModel {
        let l = self.latency;
        LatencyModel::uniform(self.topology.clone(), l.intra, l.inter)
            .with_service(l.service)
            .with_jitter(l.jitter)
    }

    pub fn lock_config(&self) -> Result<LockConfig> {
        LockConfig::new(
            self.topology.clone(),
            CounterMap::new(self.procs(), self.tdc)?,
            LockParams::new(self.locality.clone(), self.reader)?,
        )
    }
}

/// What one rank measured.
#[derive(Debug, Clone, Default)]
pub struct RankReport {
    pub rank: usize,
    /// Acquire-plus-release latencies after the warmup, in ns.
    pub samples: Vec<u64>,
    pub acquires: u64,
    /// Clock at the start of the first measured iteration.
    pub start: u64,
    pub end: u64,
    pub stats: OpStats,
    pub inserted: Vec<i64>,
}

impl RankReport {
    pub fn mean_latency(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        self.samples.iter().sum::<u64>() as f64 / self.samples.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CsvRow {
    pub metric: String,
    pub value: f64,
}

#[derive(Debug)]
pub struct BenchResult {
    pub config: BenchConfig,
    pub ranks: Vec<RankReport>,
    pub window: Arc<Window>,
    pub lock_config: Arc<LockConfig>,
    pub volume: Option<VolumeLayout>,
    pub log: Option<Arc<EventLog>>,
}

impl BenchResult {
    /// Measured acquires across all ranks.
    pub fn acquires(&self) -> u64 {
        self.ranks.iter().map(|r| r.acquires).sum()
    }

    /// From the earliest measured start to the latest end.
    pub fn elapsed_ns(&self) -> u64 {
        let active = self.ranks.iter().filter(|r| r.acquires > 0);
        let start = active.clone().map(|r| r.start).min().unwrap_or(0);
        let end = active.map(|r| r.end).max().unwrap_or(0);
        end.saturating_sub(start)
    }

    /// Acquires per second.
    pub fn throughput(&self) -> f64 {
        match self.elapsed_ns() {
            0 => 0.0,
            ns => self.acquires() as f64 * 1e9 / ns as f64,
        }
    }

    pub fn mean_latency(&self) -> f64 {
        let n: usize = self.ranks.iter().map(|r| r.samples.len()).sum();
        if n == 0 {
            return 0.0;
        }
        self.ranks.iter().flat_map(|r| &r.samples).sum::<u64>() as f64 / n as f64
    }

    pub fn rows(&self) -> Vec<CsvRow> {
        let row = |metric: String, value: f64| CsvRow { metric, value };
        match self.config.bench {
            BenchKind::Lb => self
                .ranks
                .iter()
                .map(|r| row(format!("latency_ns@{}", r.rank), r.mean_latency()))
                .collect(),
            BenchKind::Dht => vec![
                row("time_ns".into(), self.ranks.iter().map(|r| r.end).max().unwrap_or(0) as f64),
                row("ops".into(), self.acquires() as f64),
                row("throughput_per_s".into(), self.throughput()),
            ],
            _ => vec![row("throughput_per_s".into(), self.throughput())],
        }
    }

    /// Writes the rows, with a header, as CSV.
    pub fn write_csv<W: Write>(&self, out: W) -> std::io::Result<()> {
        let c = &self.config;
        let tl = c.locality.iter().map(i64::to_string).collect::<Vec<_>>().join(";");
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["bench", "lock", "P", "tdc", "tl", "tr", "fw", "seed", "metric", "value"])?;
        for r in self.rows() {
            w.write_record([
                c.bench.name().to_string(),
                c.lock_label().to_string(),
                c.procs().to_string(),
                c.tdc.to_string(),
                tl.clone(),
                c.reader.to_string(),
                c.writer_fraction.to_string(),
                c.seed.to_string(),
                r.metric,
                format!("{:.3}", r.value),
            ])?;
        }
        w.flush()
    }

    /// Mutual exclusion over the log, the threshold bounds when the run was
    /// deterministic, quiescence of the window, and for the hashtable that
    /// every inserted value is stored exactly once.
    pub fn audit(&self) -> std::result::Result<(), String> {
        if let Some(log) = &self.log {
            let events = log.snapshot();
            audit_mutual_exclusion(&events).map_err(|v| format!("mutual exclusion: {v}"))?;
            let lock = self.config.effective_lock();
            let hierarchical = matches!(lock, Some(LockKind::Rmamcs | LockKind::Rmarw));
            if self.config.mode == ClockMode::Virtual && hierarchical {
                let lc = &self.lock_config;
                ThresholdAudit {
                    params: &lc.params,
                    topology: &lc.topology,
                    counters: (lock == Some(LockKind::Rmarw)).then_some(&lc.counters),
                }
                .run(&events)
                .map_err(|v| format!("thresholds: {v}"))?;
            }
        }
        check_quiescence(&self.window, &self.lock_config.layout, Some(&self.lock_config.counters))
            .map_err(|e| format!("quiescence: {e}"))?;
        self.check_dht()
    }

    pub fn check_dht(&self) -> std::result::Result<(), String> {
        let Some(vol) = &self.volume else { return Ok(()) };
        let mut inserted: Vec<i64> = self.ranks.iter().flat_map(|r| r.inserted.iter().copied()).collect();
        inserted.sort_unstable();
        let stored = dht::contents(&self.window, vol, DHT_OWNER).map_err(|e| e.to_string())?;
        if stored != inserted {
            return Err(format!(
                "hashtable holds {} values, {} were inserted",
                stored.len(),
                inserted.len()
            ));
        }
        Ok(())
    }
}

/// Readers leave their counters at (k, k). One uncontended writer passing
/// through resets them all to (0, 0).
fn zero_counters(window: &Arc<Window>, lock_cfg: &Arc<LockConfig>) -> Result<()> {
    let mut ctx = RmaContext::new(window.clone(), 1)?;
    let mut handle = LockKind::Rmarw.handle(lock_cfg, 1)?;
    handle.acquire_write(&mut ctx)?;
    handle.release_write(&mut ctx)
}

/// Rank whose volume the hashtable workload targets.
const DHT_OWNER: usize = 1;
/// Upper bound (exclusive) for hashtable keys.
const DHT_KEYS: i64 = 1 << 20;

struct Shared {
    cfg: BenchConfig,
    lock_cfg: Arc<LockConfig>,
    window: Arc<Window>,
    sched: Option<Arc<Scheduler>>,
    log: Option<Arc<EventLog>>,
    volume: Option<VolumeLayout>,
    roles: Vec<Role>,
    wall_start: Instant,
}

pub fn run(cfg: &BenchConfig) -> Result<BenchResult> {
    if cfg.iterations == 0 {
        return Err(Error::Config("at least one iteration is required".into()));
    }
    if let Some(r) = cfg.skip_lock_rank {
        cfg.topology.check_rank(r)?;
    }
    let lock_cfg = Arc::new(cfg.lock_config()?);
    let procs = cfg.procs();
    let mut words = lock_cfg.layout.words();
    let volume = if cfg.bench == BenchKind::Dht {
        let v = VolumeLayout::new(words, cfg.dht.table_size, cfg.dht.heap_size)?;
        words = v.end();
        Some(v)
    } else {
        None
    };
    let window = Arc::new(Window::new(procs, words, Some(cfg.latency_model()))?);
    let shared = Arc::new(Shared {
        cfg: cfg.clone(),
        lock_cfg: lock_cfg.clone(),
        window: window.clone(),
        sched: (cfg.mode == ClockMode::Virtual).then(|| Arc::new(Scheduler::new(procs))),
        log: cfg.audit.then(|| Arc::new(EventLog::new())),
        volume,
        roles: WorkloadSpec::new(cfg.writer_fraction, cfg.seed)?.roles(procs),
        wall_start: Instant::now(),
    });

    let (tx, rx) = mpsc::channel();
    let handles: Vec<_> = (1..=procs)
        .map(|rank| {
            let shared = shared.clone();
            let tx = tx.clone();
            thread::spawn(move || {
                let out = run_rank(&shared, rank);
                if out.is_err() {
                    // Nobody else may be able to make progress now.
                    shared.window.abort();
                    if let Some(s) = &shared.sched {
                        s.abort();
                    }
                }
                let _ = tx.send(());
                out
            })
        })
        .collect();
    drop(tx);

    let deadline = Instant::now() + cfg.watchdog;
    let mut timed_out = false;
    for _ in 0..procs {
        let left = deadline.saturating_duration_since(Instant::now());
        if rx.recv_timeout(left).is_err() {
            timed_out = true;
            window.abort();
            if let Some(s) = &shared.sched {
                s.abort();
            }
            break;
        }
    }

    let mut ranks = Vec::with_capacity(procs);
    let mut first_err = None;
    for h in handles {
        match h.join().map_err(|_| Error::Protocol("rank thread panicked")).and_then(|r| r) {
            Ok(r) => ranks.push(r),
            Err(e) => {
                // Aborts triggered by another failure are not the cause.
                if first_err.is_none() || first_err == Some(Error::Aborted) {
                    first_err = Some(e);
                }
            }
        }
    }
    if timed_out {
        return Err(Error::Aborted);
    }
    if let Some(e) = first_err {
        return Err(e);
    }
    if cfg.effective_lock().is_some_and(LockKind::is_reader_writer)
        && check_settled(&window, &lock_cfg.layout, Some(&lock_cfg.counters)).is_ok()
    {
        zero_counters(&window, &lock_cfg)?;
    }
    Ok(BenchResult {
        config: cfg.clone(),
        ranks,
        window,
        lock_config: lock_cfg,
        volume,
        log: shared.log.clone(),
    })
}

fn run_rank(sh: &Shared, rank: usize) -> Result<RankReport> {
    let cfg = &sh.cfg;
    let mut ctx = RmaContext::new(sh.window.clone(), rank)?.with_seed(cfg.seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ rank as u64);
    if let Some(s) = &sh.sched {
        ctx = ctx.with_scheduler(s.clone());
    }
    if let Some(log) = &sh.log {
        ctx = ctx.with_log(log.clone());
    }
    if let ClockMode::Wall { busy_wait } = cfg.mode {
        ctx = ctx.with_wallclock(sh.wall_start, busy_wait);
    }
    ctx.start()?;
    let out = workload(sh, &mut ctx, rank);
    ctx.finish();
    out
}

fn workload(sh: &Shared, ctx: &mut RmaContext, rank: usize) -> Result<RankReport> {
    let cfg = &sh.cfg;
    let mut report = RankReport {
        rank,
        ..RankReport::default()
    };
    if cfg.bench == BenchKind::Dht && rank == DHT_OWNER && cfg.procs() > 1 {
        report.stats = ctx.stats();
        return Ok(report);
    }
    let mut lock = match cfg.effective_lock() {
        Some(kind) => Some(kind.handle(&sh.lock_cfg, rank)?),
        None => None,
    };
    let skip = cfg.skip_lock_rank == Some(rank);
    let warmup = cfg.warmup();
    let data = sh.lock_cfg.layout.data();
    for i in 0..cfg.iterations {
        let dht_op = match sh.volume {
            Some(_) => {
                let write = ctx.rng().gen_bool(cfg.writer_fraction);
                let key = ctx.rng().gen_range(1..DHT_KEYS);
                Some((write, key))
            }
            None => None,
        };
        let write = match dht_op {
            Some((w, _)) => w,
            None => sh.roles[rank - 1] == Role::Writer,
        };
        let t0 = ctx.now();
        if let Some(lock) = lock.as_mut() {
            enter(ctx, lock.as_mut(), write, skip)?;
        }
        match (cfg.bench, dht_op) {
            (BenchKind::Sob, _) => {
                if write {
                    ctx.put(i as i64, 1, data)?;
                    ctx.flush(1)?;
                } else {
                    ctx.get_sync(1, data)?;
                }
            }
            (BenchKind::Wcsb, _) => {
                if write {
                    ctx.accumulate(1, 1, data, AccOp::Sum)?;
                    ctx.flush(1)?;
                } else {
                    ctx.get_sync(1, data)?;
                }
                random_wait(ctx)?;
            }
            (BenchKind::Dht, Some((true, key))) => {
                let vol = sh.volume.as_ref().expect("volume present for dht");
                dht::insert(ctx, vol, DHT_OWNER, key)?;
                report.inserted.push(key);
            }
            (BenchKind::Dht, Some((false, key))) => {
                let vol = sh.volume.as_ref().expect("volume present for dht");
                dht::lookup(ctx, vol, DHT_OWNER, key)?;
            }
            _ => {}
        }
        if let Some(lock) = lock.as_mut() {
            leave(ctx, lock.as_mut(), write, skip)?;
        }
        let t1 = ctx.now();
        if cfg.bench == BenchKind::Warb {
            random_wait(ctx)?;
        }
        if i >= warmup {
            if i == warmup {
                report.start = t0;
            }
            report.samples.push(t1 - t0);
            report.acquires += 1;
        }
    }
    report.end = ctx.now();
    report.stats = ctx.stats();
    Ok(report)
}

fn random_wait(ctx: &mut RmaContext) -> Result<()> {
    let ns = ctx.rng().gen_range(1_000..=4_000);
    ctx.compute(ns)
}

fn enter(ctx: &mut RmaContext, lock: &mut dyn LockHandle, write: bool, skip: bool) -> Result<()> {
    if write {
        ctx.record(EventKind::WriteRequest, 0, 0);
        if !skip {
            lock.acquire_write(ctx)?;
        }
        ctx.record(EventKind::WriteEnter, 0, 0);
    } else {
        ctx.record(EventKind::ReadRequest, 0, 0);
        if !skip {
            lock.acquire_read(ctx)?;
        }
        ctx.record(EventKind::ReadEnter, 0, 0);
    }
    Ok(())
}

fn leave(ctx: &mut RmaContext, lock: &mut dyn LockHandle, write: bool, skip: bool) -> Result<()> {
    if write {
        ctx.record(EventKind::WriteExit, 0, 0);
        if !skip {
            lock.release_write(ctx)?;
        }
    } else {
        ctx.record(EventKind::ReadExit, 0, 0);
        if !skip {
            lock.release_read(ctx)?;
        }
    }
    Ok(())
}

macro_rules! runner {
    ($name:ident, $kind:expr) => {
        pub fn $name(cfg: &BenchConfig) -> Result<BenchResult> {
            run(&BenchConfig {
                bench: $kind,
                ..cfg.clone()
            })
        }
    };
}

runner!(run_lb, BenchKind::Lb);
runner!(run_ecsb, BenchKind::Ecsb);
runner!(run_sob, BenchKind::Sob);
runner!(run_wcsb, BenchKind::Wcsb);
runner!(run_warb, BenchKind::Warb);
runner!(run_dht_bench, BenchKind::Dht);
