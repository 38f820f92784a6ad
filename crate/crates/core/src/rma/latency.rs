use crate::error::{Error, Result};
use crate::topology::TopologySpec;

/// Simulated per-call cost, derived from where origin and target sit in the
/// machine hierarchy.
///
/// A call between ranks in the same leaf element costs `intra`; otherwise it
/// costs the delay of the first level at which their elements differ.
/// `service` is the time a target spends on each call; concurrent calls to
/// the same target queue behind each other in scheduled mode. `jitter` adds a
/// seeded uniform `0..=jitter` on top of every call.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LatencyModel {
    topology: TopologySpec,
    intra: u64,
    /// Index `i - 1` holds the delay for level `i`; level 1 is never the
    /// first differing level and stays unused.
    per_level: Vec<u64>,
    service: u64,
    jitter: u64,
}

impl LatencyModel {
    pub fn new(topology: TopologySpec, intra: u64) -> Self {
        let levels = topology.levels();
        Self {
            topology,
            intra,
            per_level: vec![intra; levels],
            service: 0,
            jitter: 0,
        }
    }

    /// Two-level shorthand: `intra` inside a leaf element, `inter` across
    /// elements at every higher level.
    pub fn uniform(topology: TopologySpec, intra: u64, inter: u64) -> Self {
        let mut model = Self::new(topology, intra);
        for d in model.per_level.iter_mut().skip(1) {
            *d = inter;
        }
        model
    }

    pub fn with_level_delay(mut self, level: usize, delay: u64) -> Result<Self> {
        if level < 2 || level > self.topology.levels() {
            return Err(Error::Level {
                level,
                levels: self.topology.levels(),
            });
        }
        self.per_level[level - 1] = delay;
        Ok(self)
    }

    pub fn with_service(mut self, service: u64) -> Self {
        self.service = service;
        self
    }

    pub fn with_jitter(mut self, jitter: u64) -> Self {
        self.jitter = jitter;
        self
    }

    pub fn topology(&self) -> &TopologySpec {
        &self.topology
    }

    pub fn service(&self) -> u64 {
        self.service
    }

    pub fn jitter(&self) -> u64 {
        self.jitter
    }

    pub fn intra(&self) -> u64 {
        self.intra
    }

    pub fn level_delay(&self, level: usize) -> u64 {
        self.per_level[level - 1]
    }

    pub fn delay(&self, origin: usize, target: usize) -> u64 {
        let common = self.topology.common_level(origin, target);
        if common == self.topology.levels() {
            self.intra
        } else {
            self.per_level[common]
        }
    }
}
