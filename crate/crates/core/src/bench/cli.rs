use std::ffi::OsString;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use clap::Parser;

use super::{run, BenchConfig, BenchKind, ClockMode, DhtConfig, LatencyConfig};
use crate::dht::DhtMode;
use crate::error::{Error, Result};
use crate::lock::LockKind;
use crate::topology::TopologySpec;

/// Distributed lock benchmarks over a simulated RMA machine.
#[derive(Debug, Parser)]
#[command(name = "rmalock", version)]
pub struct Cli {
    #[arg(long, value_enum, default_value = "lb")]
    pub bench: BenchKind,
    #[arg(long, value_enum, default_value = "rmarw")]
    pub lock: LockKind,
    #[arg(long, short = 'p', default_value_t = 16)]
    pub procs: usize,
    /// Hierarchy depth; without --fanout every element has two children.
    #[arg(long)]
    pub levels: Option<usize>,
    /// Children per element, from the root down.
    #[arg(long, value_delimiter = ',')]
    pub fanout: Option<Vec<usize>>,
    /// Processes per physical reader counter [default: leaf element size].
    #[arg(long)]
    pub tdc: Option<usize>,
    /// Locality thresholds per level, from the root down [default: 4 each].
    #[arg(long, value_delimiter = ',')]
    pub tl: Option<Vec<i64>>,
    #[arg(long, default_value_t = 8)]
    pub tr: i64,
    /// Fraction of writers (per operation for the hashtable).
    #[arg(long, default_value_t = 0.25)]
    pub fw: f64,
    #[arg(long, default_value_t = 10_000)]
    pub iters: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Call latency inside a leaf element, ns.
    #[arg(long, default_value_t = 100)]
    pub intra: u64,
    /// Call latency across elements, ns.
    #[arg(long, default_value_t = 1000)]
    pub inter: u64,
    /// Per-call service time at the target, ns.
    #[arg(long, default_value_t = 20)]
    pub service: u64,
    /// Upper bound of the uniform per-call jitter, ns.
    #[arg(long, default_value_t = 0)]
    pub jitter: u64,
    /// Write CSV here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Record events and fail with exit code 1 on any violation.
    #[arg(long)]
    pub audit: bool,
    /// Time with real clocks instead of the virtual clock.
    #[arg(long)]
    pub wallclock: bool,
    /// With --wallclock, burn the simulated latency of every call.
    #[arg(long, requires = "wallclock")]
    pub busy_wait: bool,
    #[arg(long, value_enum, default_value = "rw")]
    pub dht_mode: DhtMode,
    #[arg(long, default_value_t = 1024)]
    pub table_size: usize,
    #[arg(long, default_value_t = 1024)]
    pub heap_size: usize,
    /// Watchdog per run, seconds.
    #[arg(long, default_value_t = 60)]
    pub timeout: u64,
    #[arg(long, hide = true)]
    pub inject_me_bug: Option<usize>,
}

impl Cli {
    pub fn to_config(&self) -> Result<BenchConfig> {
        let fanout = match (&self.fanout, self.levels) {
            (Some(f), Some(n)) if f.len() + 1 != n => {
                return Err(Error::Config(format!("--fanout has {} entries, --levels {n} needs {}", f.len(), n - 1)))
            }
            (Some(f), _) => f.clone(),
            (None, Some(0)) => return Err(Error::Config("--levels must be at least 1".into())),
            (None, Some(n)) => vec![2; n - 1],
            (None, None) => Vec::new(),
        };
        let topology = TopologySpec::new(self.procs, &fanout)?;
        let mut cfg = BenchConfig::new(self.bench, self.lock, topology);
        if let Some(tdc) = self.tdc {
            cfg.tdc = tdc;
        }
        if let Some(tl) = &self.tl {
            cfg.locality = tl.clone();
        }
        cfg.reader = self.tr;
        cfg.writer_fraction = self.fw;
        cfg.iterations = self.iters;
        cfg.seed = self.seed;
        cfg.latency = LatencyConfig {
            intra: self.intra,
            inter: self.inter,
            service: self.service,
            jitter: self.jitter,
        };
        cfg.mode = if self.wallclock {
            ClockMode::Wall {
                busy_wait: self.busy_wait,
            }
        } else {
            ClockMode::Virtual
        };
        cfg.audit = self.audit;
        cfg.dht = DhtConfig {
            mode: self.dht_mode,
            table_size: self.table_size,
            heap_size: self.heap_size,
        };
        cfg.watchdog = std::time::Duration::from_secs(self.timeout);
        cfg.skip_lock_rank = self.inject_me_bug;
        Ok(cfg)
    }
}

/// Parses `args` (program name first), runs, and returns the exit code:
/// 0 on success, 1 on a failed run or audit, 2 on a usage error.
pub fn run_cli<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = write!(stderr, "{}", e.render());
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let cfg = match cli.to_config() {
        Ok(c) => c,
        Err(e) => {
            let _ = writeln!(stderr, "rmalock: {e}");
            return 2;
        }
    };
    let result = match run(&cfg) {
        Ok(r) => r,
        Err(e @ Error::Config(_)) => {
            let _ = writeln!(stderr, "rmalock: {e}");
            return 2;
        }
        Err(e) => {
            let _ = writeln!(stderr, "rmalock: {e}");
            return 1;
        }
    };
    let written = match &cli.out {
        Some(path) => File::create(path).and_then(|f| result.write_csv(BufWriter::new(f))),
        None => result.write_csv(&mut *stdout),
    };
    if let Err(e) = written {
        let _ = writeln!(stderr, "rmalock: writing CSV: {e}");
        return 1;
    }
    if cfg.audit {
        if let Err(e) = result.audit() {
            let _ = writeln!(stderr, "rmalock: audit failed: {e}");
            return 1;
        }
    }
    0
}
