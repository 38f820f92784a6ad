//! Machine hierarchy, process-to-element mappings, counter placement and
//! the fixed window layout shared by every lock.
//!
//! Levels are numbered from 1 (the whole machine, a single element) down to
//! `N` (the leaves, e.g. compute nodes). Ranks are `1..=P` and are mapped to
//! elements in contiguous blocks, so consecutive ranks share the deepest
//! elements.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Shape of the simulated machine.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TopologySpec {
    procs: usize,
    /// Fan-out below each level; `fanout[k]` is the number of children of
    /// every element at level `k + 1`.
    fanout: Vec<usize>,
    /// Element count per level, index 0 is level 1.
    elements: Vec<usize>,
}

impl TopologySpec {
    pub fn new(procs: usize, fanout: &[usize]) -> Result<Self> {
        if procs == 0 {
            return Err(Error::Config("process count must be at least 1".into()));
        }
        if fanout.iter().any(|&f| f == 0) {
            return Err(Error::Config("fan-out values must be at least 1".into()));
        }
        let mut elements = Vec::with_capacity(fanout.len() + 1);
        elements.push(1usize);
        for &f in fanout {
            let prev = *elements.last().unwrap();
            elements.push(prev * f);
        }
        let leaves = *elements.last().unwrap();
        if procs % leaves != 0 {
            return Err(Error::Config(format!(
                "{procs} processes cannot be split evenly over {leaves} leaf elements"
            )));
        }
        Ok(Self {
            procs,
            fanout: fanout.to_vec(),
            elements,
        })
    }

    /// A single-level machine: one element holding every process.
    pub fn flat(procs: usize) -> Result<Self> {
        Self::new(procs, &[])
    }

    pub fn procs(&self) -> usize {
        self.procs
    }

    pub fn levels(&self) -> usize {
        self.elements.len()
    }

    pub fn fanout(&self) -> &[usize] {
        &self.fanout
    }

    /// Number of elements at `level` (`N_i`).
    pub fn element_count(&self, level: usize) -> Result<usize> {
        self.check_level(level)?;
        Ok(self.elements[level - 1])
    }

    /// Ranks per element at `level`.
    pub fn block_size(&self, level: usize) -> Result<usize> {
        Ok(self.procs / self.element_count(level)?)
    }

    /// `e(p, i)`: the element (1-based) hosting rank `p` at `level`.
    pub fn element_of(&self, rank: usize, level: usize) -> Result<usize> {
        self.check_rank(rank)?;
        let block = self.block_size(level)?;
        Ok((rank - 1) / block + 1)
    }

    /// Rank that stores the TAIL word of the queue for element `element` at
    /// `level`: the lowest rank inside that element.
    pub fn tail_host(&self, level: usize, element: usize) -> Result<usize> {
        let count = self.element_count(level)?;
        if element == 0 || element > count {
            return Err(Error::Config(format!(
                "element {element} does not exist at level {level} ({count} elements)"
            )));
        }
        Ok((element - 1) * self.block_size(level)? + 1)
    }

    /// Deepest level at which both ranks share an element (always >= 1).
    pub fn common_level(&self, a: usize, b: usize) -> usize {
        let mut level = 1;
        for l in 2..=self.levels() {
            let block = self.procs / self.elements[l - 1];
            if (a - 1) / block == (b - 1) / block {
                level = l;
            } else {
                break;
            }
        }
        level
    }

    pub(crate) fn check_level(&self, level: usize) -> Result<()> {
        if level == 0 || level > self.levels() {
            return Err(Error::Level {
                level,
                levels: self.levels(),
            });
        }
        Ok(())
    }

    pub(crate) fn check_rank(&self, rank: usize) -> Result<()> {
        if rank == 0 || rank > self.procs {
            return Err(Error::Address { rank, offset: 0 });
        }
        Ok(())
    }
}

/// Placement of the physical reader counters.
///
/// Counter `j` covers ranks `(j-1)*T_DC + 1 ..= j*T_DC` and lives on the first
/// rank of that block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CounterMap {
    stride: usize,
    procs: usize,
}

impl CounterMap {
    pub fn new(procs: usize, stride: usize) -> Result<Self> {
        if stride == 0 {
            return Err(Error::Config("T_DC must be at least 1".into()));
        }
        if procs == 0 {
            return Err(Error::Config("process count must be at least 1".into()));
        }
        Ok(Self { stride, procs })
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    /// Number of physical counters, `ceil(P / T_DC)`.
    pub fn count(&self) -> usize {
        self.procs.div_ceil(self.stride)
    }

    /// `ceil(p / T_DC)`.
    pub fn counter_index(&self, rank: usize) -> usize {
        rank.div_ceil(self.stride)
    }

    pub fn host_rank(&self, index: usize) -> usize {
        (index - 1) * self.stride + 1
    }

    /// `c(p)`: the rank hosting the counter that `rank` uses.
    pub fn counter_rank(&self, rank: usize) -> usize {
        self.host_rank(self.counter_index(rank))
    }

    pub fn hosts(&self) -> impl Iterator<Item = usize> + '_ {
        (1..=self.count()).map(|j| self.host_rank(j))
    }
}

/// Lock thresholds: one locality threshold per level plus the reader
/// threshold. The writer threshold is their product.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LockParams {
    locality: Vec<i64>,
    reader: i64,
}

impl LockParams {
    pub fn new(locality: Vec<i64>, reader: i64) -> Result<Self> {
        if locality.is_empty() {
            return Err(Error::Config("at least one locality threshold is required".into()));
        }
        if locality.iter().any(|&t| t < 1) {
            return Err(Error::Config("locality thresholds must be at least 1".into()));
        }
        if reader < 1 {
            return Err(Error::Config("T_R must be at least 1".into()));
        }
        locality
            .iter()
            .try_fold(1i64, |acc, &t| acc.checked_mul(t))
            .filter(|&tw| tw < crate::lock::MAX_COUNT)
            .ok_or_else(|| Error::Config("writer threshold overflows".into()))?;
        Ok(Self { locality, reader })
    }

    /// `T_L,i` for `level` in `1..=N`.
    pub fn locality(&self, level: usize) -> i64 {
        self.locality[level - 1]
    }

    pub fn locality_all(&self) -> &[i64] {
        &self.locality
    }

    pub fn reader(&self) -> i64 {
        self.reader
    }

    /// `T_W`, the product of all locality thresholds.
    pub fn writer(&self) -> i64 {
        self.locality.iter().product()
    }

    /// Product of the locality thresholds from `level` down to the leaves.
    pub fn locality_product_from(&self, level: usize) -> i64 {
        self.locality[level - 1..].iter().product()
    }

    pub fn levels(&self) -> usize {
        self.locality.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Reader,
    Writer,
}

/// Reader/writer role assignment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WorkloadSpec {
    pub writer_fraction: f64,
    pub seed: u64,
}

impl WorkloadSpec {
    pub fn new(writer_fraction: f64, seed: u64) -> Result<Self> {
        if !(0.0..=1.0).contains(&writer_fraction) {
            return Err(Error::Config("F_W must lie in [0, 1]".into()));
        }
        Ok(Self {
            writer_fraction,
            seed,
        })
    }

    pub fn writer_count(&self, procs: usize) -> usize {
        (self.writer_fraction * procs as f64).round() as usize
    }

    /// Roles indexed by `rank - 1`; exactly `writer_count` writers, picked by a
    /// seeded shuffle.
    pub fn roles(&self, procs: usize) -> Vec<Role> {
        let mut ranks: Vec<usize> = (0..procs).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ 0x5eed_0001);
        ranks.shuffle(&mut rng);
        let mut roles = vec![Role::Reader; procs];
        for &r in &ranks[..self.writer_count(procs)] {
            roles[r] = Role::Writer;
        }
        roles
    }
}

/// Offsets of every protocol field inside a rank's window.
///
/// Each level `i` owns a (NEXT, STATUS, TAIL) triple so a writer that holds
/// queue positions at several levels at once never overwrites itself. The
/// reader counter pair, the spin-lock word and one shared data word follow.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowLayout {
    levels: usize,
}

impl WindowLayout {
    pub fn new(levels: usize) -> Result<Self> {
        if levels == 0 {
            return Err(Error::Config("layout needs at least one level".into()));
        }
        Ok(Self { levels })
    }

    pub fn for_topology(spec: &TopologySpec) -> Self {
        Self {
            levels: spec.levels(),
        }
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    pub fn next(&self, level: usize) -> usize {
        debug_assert!((1..=self.levels).contains(&level));
        3 * (level - 1)
    }

    pub fn status(&self, level: usize) -> usize {
        3 * (level - 1) + 1
    }

    pub fn tail(&self, level: usize) -> usize {
        3 * (level - 1) + 2
    }

    pub fn arrive(&self) -> usize {
        3 * self.levels
    }

    pub fn depart(&self) -> usize {
        3 * self.levels + 1
    }

    /// Word used by the test-and-set baseline.
    pub fn spin(&self) -> usize {
        3 * self.levels + 2
    }

    /// Shared data word touched by the benchmark critical sections.
    pub fn data(&self) -> usize {
        3 * self.levels + 3
    }

    /// Words per rank needed by the lock structures.
    pub fn words(&self) -> usize {
        3 * self.levels + 4
    }

    /// Every named field with its offset, for self-checks and dumps.
    pub fn fields(&self) -> Vec<(String, usize)> {
        let mut out = Vec::with_capacity(self.words());
        for level in 1..=self.levels {
            out.push((format!("NEXT[{level}]"), self.next(level)));
            out.push((format!("STATUS[{level}]"), self.status(level)));
            out.push((format!("TAIL[{level}]"), self.tail(level)));
        }
        out.push(("ARRIVE".into(), self.arrive()));
        out.push(("DEPART".into(), self.depart()));
        out.push(("SPIN".into(), self.spin()));
        out.push(("DATA".into(), self.data()));
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn example() -> TopologySpec {
        // 2 racks x 2 nodes, 16 processes per node.
        TopologySpec::new(64, &[2, 2]).unwrap()
    }

    #[test]
    fn element_of_examples() {
        let t = example();
        assert_eq!(t.element_of(20, 3).unwrap(), 2);
        for p in 1..=64 {
            assert_eq!(t.element_of(p, 1).unwrap(), 1);
        }
        for i in 1..=3 {
            assert_eq!(t.element_of(1, i).unwrap(), 1);
        }
        assert!(matches!(t.element_of(1, 4), Err(Error::Level { .. })));
        assert!(matches!(t.element_of(1, 0), Err(Error::Level { .. })));
        assert!(t.element_of(65, 1).is_err());
    }

    #[test]
    fn tail_host_examples() {
        let t = example();
        assert_eq!(t.tail_host(3, 2).unwrap(), 17);
        assert_eq!(t.tail_host(1, 1).unwrap(), 1);
        for level in 1..=3 {
            let hosts: HashSet<_> = (1..=t.element_count(level).unwrap())
                .map(|j| t.tail_host(level, j).unwrap())
                .collect();
            assert_eq!(hosts.len(), t.element_count(level).unwrap());
        }
        assert!(t.tail_host(2, 3).is_err());
    }

    #[test]
    fn rejects_ragged_blocks() {
        assert!(TopologySpec::new(10, &[4]).is_err());
        assert!(TopologySpec::new(0, &[]).is_err());
        assert!(TopologySpec::new(8, &[0]).is_err());
    }

    #[test]
    fn partition_and_refinement() {
        for (procs, fanout) in [(64, vec![2, 2]), (12, vec![3]), (8, vec![2, 2, 2]), (5, vec![])] {
            let t = TopologySpec::new(procs, &fanout).unwrap();
            for level in 1..=t.levels() {
                let mut seen = vec![0usize; t.element_count(level).unwrap()];
                for p in 1..=procs {
                    seen[t.element_of(p, level).unwrap() - 1] += 1;
                }
                assert!(seen.iter().all(|&c| c == t.block_size(level).unwrap()));
            }
            for level in 2..=t.levels() {
                let mut parent_of = std::collections::HashMap::new();
                for p in 1..=procs {
                    let child = t.element_of(p, level).unwrap();
                    let parent = t.element_of(p, level - 1).unwrap();
                    assert_eq!(*parent_of.entry(child).or_insert(parent), parent);
                }
            }
        }
    }

    #[test]
    fn common_level_matches_element_of() {
        let t = example();
        for a in 1..=64 {
            for b in [1, 16, 17, 33, 64] {
                let l = t.common_level(a, b);
                assert_eq!(t.element_of(a, l).unwrap(), t.element_of(b, l).unwrap());
                if l < 3 {
                    assert_ne!(t.element_of(a, l + 1).unwrap(), t.element_of(b, l + 1).unwrap());
                }
            }
        }
    }

    #[test]
    fn counter_rank_examples() {
        let cm = CounterMap::new(64, 16).unwrap();
        assert_eq!(cm.counter_index(17), 2);
        assert_eq!(cm.counter_rank(17), 17);
        assert_eq!(cm.counter_rank(5), 1);
        assert_eq!(cm.count(), 4);
        let one = CounterMap::new(9, 1).unwrap();
        for p in 1..=9 {
            assert_eq!(one.counter_rank(p), p);
        }
        // Constant over a block, distinct hosts.
        let cm = CounterMap::new(10, 4).unwrap();
        assert_eq!(cm.count(), 3);
        for p in 1..=10 {
            let j = cm.counter_index(p);
            assert!(cm.host_rank(j) <= p && p < cm.host_rank(j) + 4);
        }
        let hosts: HashSet<_> = cm.hosts().collect();
        assert_eq!(hosts.len(), 3);
        assert!(CounterMap::new(4, 0).is_err());
    }

    #[test]
    fn params_writer_threshold_is_product() {
        let p = LockParams::new(vec![4, 4], 8).unwrap();
        assert_eq!(p.writer(), 16);
        assert_eq!(p.locality_product_from(2), 4);
        assert_eq!(LockParams::new(vec![2, 3, 5], 1).unwrap().writer(), 30);
        assert!(LockParams::new(vec![0, 4], 8).is_err());
        assert!(LockParams::new(vec![4], 0).is_err());
        assert!(LockParams::new(vec![], 1).is_err());
    }

    #[test]
    fn workload_writer_count() {
        let w = WorkloadSpec::new(0.25, 7).unwrap();
        let roles = w.roles(32);
        assert_eq!(roles.iter().filter(|r| **r == Role::Writer).count(), 8);
        assert_eq!(roles, WorkloadSpec::new(0.25, 7).unwrap().roles(32));
        assert_eq!(WorkloadSpec::new(0.002, 1).unwrap().writer_count(32), 0);
        assert_eq!(WorkloadSpec::new(1.0, 1).unwrap().writer_count(32), 32);
        assert!(WorkloadSpec::new(1.5, 1).is_err());
    }

    #[test]
    fn layout_is_injective_and_fixed() {
        for levels in 1..=4 {
            let l = WindowLayout::new(levels).unwrap();
            let fields = l.fields();
            let offsets: HashSet<_> = fields.iter().map(|(_, o)| *o).collect();
            assert_eq!(offsets.len(), fields.len());
            assert!(offsets.iter().all(|&o| o < l.words()));
            assert_eq!(fields.len(), l.words());
        }
        let flat = WindowLayout::new(1).unwrap();
        assert_eq!((flat.next(1), flat.status(1), flat.tail(1)), (0, 1, 2));
        let t = example();
        assert_eq!(WindowLayout::for_topology(&t), WindowLayout::new(3).unwrap());
    }
}
