//! Inclusive, set-associative, true-LRU cache hierarchy in front of a flat
//! memory latency.
//!
//! Latencies are additive miss penalties: a lookup that misses levels
//! `0..k` pays the sum of their `miss_latency_cycles`, and a lookup that
//! reaches memory additionally pays the memory-controller latency. Hits in
//! the first level cost nothing here; the per-op base cost is charged by the
//! engine. Writes allocate and are written back on eviction.

use alloc::vec::Vec;
use core::fmt;

use thiserror::Error;

use crate::access::AccessKind;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CacheError {
    #[error("hierarchy needs at least one cache level")]
    NoLevels,
    #[error("level {level}: line size {line_size} is not a power of two")]
    LineSize { level: usize, line_size: u64 },
    #[error("level {level}: all levels must share one line size ({expected} bytes)")]
    MixedLineSize { level: usize, expected: u64 },
    #[error("level {level}: associativity must be at least 1")]
    Associativity { level: usize },
    #[error("level {level}: capacity {capacity} is not a positive multiple of associativity x line size")]
    Capacity { level: usize, capacity: u64 },
    #[error("{field} must be a positive finite number, got {value}")]
    NonPositive { field: &'static str, value: f64 },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CacheLevelConfig {
    pub capacity: u64,
    pub associativity: u32,
    pub line_size: u64,
    /// Cycles charged when a lookup misses this level.
    pub miss_latency_cycles: u64,
    /// Recorded for reference; miss overlap is not modelled.
    pub mshrs: u32,
}

impl CacheLevelConfig {
    pub fn new(capacity: u64, associativity: u32, miss_latency_cycles: u64) -> Self {
        Self {
            capacity,
            associativity,
            line_size: 64,
            miss_latency_cycles,
            mshrs: 32,
        }
    }

    pub fn sets(&self) -> u64 {
        self.capacity / (u64::from(self.associativity) * self.line_size)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HierarchyConfig {
    /// First level first.
    pub levels: Vec<CacheLevelConfig>,
    pub mem_ctrl_latency_ns: f64,
    pub cpu_freq_ghz: f64,
}

impl Default for HierarchyConfig {
    /// 32 KB 2-way L1 (2 cycles/miss), 2 MB 8-way L2 (20 cycles/miss),
    /// 75 ns memory controller, 3 GHz.
    fn default() -> Self {
        Self {
            levels: alloc::vec![
                CacheLevelConfig::new(32 * 1024, 2, 2),
                CacheLevelConfig::new(2 * 1024 * 1024, 8, 20),
            ],
            mem_ctrl_latency_ns: 75.0,
            cpu_freq_ghz: 3.0,
        }
    }
}

/// Rounds `ns * ghz` to the nearest cycle; negative latencies clamp to 0.
pub fn ns_to_cycles(ns: f64, ghz: f64) -> u64 {
    let cycles = ns * ghz;
    if cycles <= 0.0 {
        0
    } else {
        (cycles + 0.5) as u64
    }
}

fn positive(field: &'static str, value: f64) -> Result<(), CacheError> {
    if value.is_finite() && value > 0.0 {
        Ok(())
    } else {
        Err(CacheError::NonPositive { field, value })
    }
}

impl HierarchyConfig {
    pub fn validate(&self) -> Result<(), CacheError> {
        let first = self.levels.first().ok_or(CacheError::NoLevels)?;
        for (level, cfg) in self.levels.iter().enumerate() {
            if !cfg.line_size.is_power_of_two() {
                return Err(CacheError::LineSize {
                    level,
                    line_size: cfg.line_size,
                });
            }
            if cfg.line_size != first.line_size {
                return Err(CacheError::MixedLineSize {
                    level,
                    expected: first.line_size,
                });
            }
            if cfg.associativity == 0 {
                return Err(CacheError::Associativity { level });
            }
            let way_bytes = u64::from(cfg.associativity) * cfg.line_size;
            if cfg.capacity == 0 || cfg.capacity % way_bytes != 0 {
                return Err(CacheError::Capacity {
                    level,
                    capacity: cfg.capacity,
                });
            }
        }
        positive("mem_ctrl_latency_ns", self.mem_ctrl_latency_ns)?;
        positive("cpu_freq_ghz", self.cpu_freq_ghz)
    }

    pub fn line_size(&self) -> u64 {
        self.levels.first().map_or(64, |l| l.line_size)
    }

    pub fn memory_latency_cycles(&self) -> u64 {
        ns_to_cycles(self.mem_ctrl_latency_ns, self.cpu_freq_ghz)
    }

    /// Sum of all level miss penalties.
    pub fn cache_miss_cycles(&self) -> u64 {
        self.levels.iter().map(|l| l.miss_latency_cycles).sum()
    }

    /// Latency of a lookup that misses every level.
    pub fn full_miss_cycles(&self) -> u64 {
        self.cache_miss_cycles() + self.memory_latency_cycles()
    }
}

/// Where a lookup was satisfied.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum HitLevel {
    /// Cache level index, 0 = L1.
    Cache(usize),
    Memory,
}

impl fmt::Display for HitLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            HitLevel::Cache(i) => write!(f, "L{}", i + 1),
            HitLevel::Memory => f.write_str("MEMORY"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AccessResult {
    /// Deepest level any touched line had to go to.
    pub hit_level: HitLevel,
    /// Max over the touched lines (lines are fetched in parallel).
    pub latency_cycles: u64,
    pub lines_touched: u32,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct LevelStats {
    pub hits: u64,
    pub misses: u64,
    pub writebacks: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct HierarchyStats {
    pub levels: Vec<LevelStats>,
    /// Lines fetched from memory.
    pub memory_reads: u64,
    /// Dirty lines written back to memory.
    pub memory_writebacks: u64,
}

#[derive(Clone, Copy, Debug, Default)]
struct Way {
    line: u64,
    valid: bool,
    dirty: bool,
    stamp: u64,
}

#[derive(Clone, Debug)]
struct CacheLevel {
    sets: u64,
    ways: usize,
    miss_latency: u64,
    slots: Vec<Way>,
    clock: u64,
}

struct Evicted {
    line: u64,
    dirty: bool,
}

impl CacheLevel {
    fn new(cfg: &CacheLevelConfig) -> Self {
        let sets = cfg.sets();
        let ways = cfg.associativity as usize;
        Self {
            sets,
            ways,
            miss_latency: cfg.miss_latency_cycles,
            slots: alloc::vec![Way::default(); sets as usize * ways],
            clock: 0,
        }
    }

    fn set_range(&self, line: u64) -> core::ops::Range<usize> {
        let set = (line % self.sets) as usize;
        set * self.ways..(set + 1) * self.ways
    }

    fn find(&self, line: u64) -> Option<usize> {
        self.set_range(line)
            .find(|&i| self.slots[i].valid && self.slots[i].line == line)
    }

    fn touch(&mut self, slot: usize, dirty: bool) {
        self.clock += 1;
        let way = &mut self.slots[slot];
        way.stamp = self.clock;
        way.dirty |= dirty;
    }

    /// Fills `line`, returning the LRU victim if a valid line was evicted.
    fn fill(&mut self, line: u64, dirty: bool) -> Option<Evicted> {
        let range = self.set_range(line);
        let slot = range
            .clone()
            .find(|&i| !self.slots[i].valid)
            .unwrap_or_else(|| {
                range
                    .min_by_key(|&i| self.slots[i].stamp)
                    .expect("associativity >= 1")
            });
        let old = self.slots[slot];
        self.clock += 1;
        self.slots[slot] = Way {
            line,
            valid: true,
            dirty,
            stamp: self.clock,
        };
        old.valid.then_some(Evicted {
            line: old.line,
            dirty: old.dirty,
        })
    }

    /// Drops `line` if present, returning whether it was dirty.
    fn invalidate(&mut self, line: u64) -> Option<bool> {
        let slot = self.find(line)?;
        self.slots[slot].valid = false;
        Some(self.slots[slot].dirty)
    }

    fn mark_dirty(&mut self, line: u64) -> bool {
        match self.find(line) {
            Some(slot) => {
                self.slots[slot].dirty = true;
                true
            }
            None => false,
        }
    }

    fn lines(&self) -> impl Iterator<Item = u64> + '_ {
        self.slots.iter().filter(|w| w.valid).map(|w| w.line)
    }

    fn clear(&mut self) {
        self.slots.fill(Way::default());
        self.clock = 0;
    }
}

/// Cache state of one simulation instance.
#[derive(Clone, Debug)]
pub struct Hierarchy {
    config: HierarchyConfig,
    levels: Vec<CacheLevel>,
    line_shift: u32,
    memory_latency: u64,
    stats: HierarchyStats,
}

impl Hierarchy {
    pub fn new(config: HierarchyConfig) -> Result<Self, CacheError> {
        config.validate()?;
        let levels: Vec<CacheLevel> = config.levels.iter().map(CacheLevel::new).collect();
        let stats = HierarchyStats {
            levels: alloc::vec![LevelStats::default(); levels.len()],
            ..Default::default()
        };
        Ok(Self {
            line_shift: config.line_size().trailing_zeros(),
            memory_latency: config.memory_latency_cycles(),
            levels,
            stats,
            config,
        })
    }

    pub fn config(&self) -> &HierarchyConfig {
        &self.config
    }

    pub fn stats(&self) -> &HierarchyStats {
        &self.stats
    }

    pub fn line_size(&self) -> u64 {
        1 << self.line_shift
    }

    /// Invalidates every line and zeroes the statistics.
    pub fn reset(&mut self) {
        for level in &mut self.levels {
            level.clear();
        }
        self.stats = HierarchyStats {
            levels: alloc::vec![LevelStats::default(); self.levels.len()],
            ..Default::default()
        };
    }

    /// Accesses `size` bytes at `addr` with the configured memory latency.
    pub fn access(&mut self, addr: u64, size: u64, kind: AccessKind) -> AccessResult {
        let latency = self.memory_latency;
        self.access_with(addr, size, kind, |_| latency)
    }

    /// Like [`access`](Self::access), but the memory latency (in cycles) of
    /// each line that reaches memory is supplied by `memory_latency`, given
    /// the line's byte address.
    pub fn access_with(
        &mut self,
        addr: u64,
        size: u64,
        kind: AccessKind,
        mut memory_latency: impl FnMut(u64) -> u64,
    ) -> AccessResult {
        let size = size.max(1);
        let first = addr >> self.line_shift;
        let last = (addr + (size - 1)) >> self.line_shift;
        let mut result = AccessResult {
            hit_level: HitLevel::Cache(0),
            latency_cycles: 0,
            lines_touched: 0,
        };
        for line in first..=last {
            let (level, latency) = self.access_line(line, kind, &mut memory_latency);
            result.hit_level = result.hit_level.max(level);
            result.latency_cycles = result.latency_cycles.max(latency);
            result.lines_touched += 1;
        }
        result
    }

    fn access_line(
        &mut self,
        line: u64,
        kind: AccessKind,
        memory_latency: &mut impl FnMut(u64) -> u64,
    ) -> (HitLevel, u64) {
        let write = kind.is_write();
        let mut latency = 0;
        let mut found = None;
        for (k, level) in self.levels.iter_mut().enumerate() {
            if let Some(slot) = level.find(line) {
                level.touch(slot, write && k == 0);
                self.stats.levels[k].hits += 1;
                found = Some(k);
                break;
            }
            self.stats.levels[k].misses += 1;
            latency += level.miss_latency;
        }
        let depth = match found {
            Some(k) => k,
            None => {
                self.stats.memory_reads += 1;
                latency += memory_latency(line << self.line_shift);
                self.levels.len()
            }
        };
        // Fill from the outermost missed level inwards so evictions there
        // back-invalidate inner copies before the inner fills happen.
        for k in (0..depth).rev() {
            if let Some(victim) = self.levels[k].fill(line, write && k == 0) {
                self.evict(k, victim);
            }
        }
        let level = found.map_or(HitLevel::Memory, HitLevel::Cache);
        (level, latency)
    }

    fn evict(&mut self, k: usize, victim: Evicted) {
        let mut dirty = victim.dirty;
        for inner in 0..k {
            dirty |= self.levels[inner].invalidate(victim.line).unwrap_or(false);
        }
        if !dirty {
            return;
        }
        self.stats.levels[k].writebacks += 1;
        let absorbed = self
            .levels
            .get_mut(k + 1)
            .is_some_and(|outer| outer.mark_dirty(victim.line));
        if !absorbed {
            self.stats.memory_writebacks += 1;
        }
    }

    /// Whether every line of each level is also present in the next one.
    pub fn is_inclusive(&self) -> bool {
        self.levels
            .windows(2)
            .all(|pair| pair[0].lines().all(|line| pair[1].find(line).is_some()))
    }

    /// Whether the line holding `addr` is resident in `level`.
    pub fn contains(&self, level: usize, addr: u64) -> bool {
        self.levels[level].find(addr >> self.line_shift).is_some()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::collections::VecDeque;
    use alloc::vec;

    fn table5() -> Hierarchy {
        Hierarchy::new(HierarchyConfig::default()).unwrap()
    }

    fn tiny(l1: (u64, u32), l2: (u64, u32)) -> Hierarchy {
        let mut a = CacheLevelConfig::new(l1.0, l1.1, 2);
        let mut b = CacheLevelConfig::new(l2.0, l2.1, 20);
        a.line_size = 64;
        b.line_size = 64;
        Hierarchy::new(HierarchyConfig {
            levels: vec![a, b],
            ..Default::default()
        })
        .unwrap()
    }

    /// Independent single-level LRU model: one recency list per set.
    struct RefLru {
        sets: Vec<VecDeque<u64>>,
        ways: usize,
        misses: u64,
    }

    impl RefLru {
        fn new(capacity: u64, ways: usize, line: u64) -> Self {
            let sets = (capacity / line) as usize / ways;
            Self {
                sets: (0..sets).map(|_| VecDeque::new()).collect(),
                ways,
                misses: 0,
            }
        }

        fn access(&mut self, line: u64) {
            let n = self.sets.len() as u64;
            let set = &mut self.sets[(line % n) as usize];
            if let Some(pos) = set.iter().position(|&l| l == line) {
                set.remove(pos);
            } else {
                self.misses += 1;
                if set.len() == self.ways {
                    set.pop_back();
                }
            }
            set.push_front(line);
        }
    }

    #[test]
    fn full_miss_costs_247_cycles() {
        let cfg = HierarchyConfig::default();
        assert_eq!(cfg.memory_latency_cycles(), 225);
        assert_eq!(cfg.full_miss_cycles(), 247);
        // 247 cycles at 3 GHz is 82.3 ns
        let ns = cfg.full_miss_cycles() as f64 / cfg.cpu_freq_ghz;
        assert!((ns - 82.33).abs() < 0.01);

        let mut h = table5();
        let r = h.access(0x40000, 8, AccessKind::Read);
        assert_eq!(r.hit_level, HitLevel::Memory);
        assert_eq!(r.latency_cycles, 247);
        let r = h.access(0x40008, 8, AccessKind::Read);
        assert_eq!((r.hit_level, r.latency_cycles), (HitLevel::Cache(0), 0));
    }

    #[test]
    fn l2_hit_pays_l1_penalty() {
        let mut h = tiny((128, 2), (1024, 4));
        h.access(0, 1, AccessKind::Read);
        // same L1 set (1 set of 2 ways): evict line 0 from L1 only
        h.access(64, 1, AccessKind::Read);
        h.access(128, 1, AccessKind::Read);
        assert!(!h.contains(0, 0));
        assert!(h.contains(1, 0));
        let r = h.access(0, 1, AccessKind::Read);
        assert_eq!((r.hit_level, r.latency_cycles), (HitLevel::Cache(1), 2));
    }

    #[test]
    fn sequential_scan_misses() {
        let mut h = table5();
        let mut reference = RefLru::new(32 * 1024, 2, 64);
        for addr in (0..1u64 << 20).step_by(8) {
            h.access(addr, 8, AccessKind::Read);
            reference.access(addr >> 6);
        }
        assert_eq!(reference.misses, 16384);
        assert_eq!(h.stats().levels[0].misses, 16384);
        assert_eq!(h.stats().memory_reads, 16384);
    }

    #[test]
    fn random_trace_matches_reference_lru() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        // single level so the reference model applies directly
        let mut h = Hierarchy::new(HierarchyConfig {
            levels: vec![CacheLevelConfig::new(4096, 4, 2)],
            ..Default::default()
        })
        .unwrap();
        let mut reference = RefLru::new(4096, 4, 64);
        for _ in 0..20_000 {
            let addr = rng.random_range(0..64 * 1024u64);
            h.access(addr, 1, AccessKind::Read);
            reference.access(addr >> 6);
        }
        assert_eq!(h.stats().levels[0].misses, reference.misses);
    }

    #[test]
    fn lru_evicts_least_recent() {
        // 1 set, 4 ways
        let mut h = Hierarchy::new(HierarchyConfig {
            levels: vec![CacheLevelConfig::new(256, 4, 2)],
            ..Default::default()
        })
        .unwrap();
        for line in 0..4u64 {
            h.access(line * 64, 1, AccessKind::Read);
        }
        h.access(0, 1, AccessKind::Read); // line 0 becomes MRU; line 1 is LRU
        h.access(4 * 64, 1, AccessKind::Read);
        assert!(h.contains(0, 0));
        assert!(!h.contains(0, 64));
        for line in [2u64, 3, 4] {
            assert!(h.contains(0, line * 64));
        }
    }

    #[test]
    fn inclusion_holds_under_conflicts() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let mut h = tiny((512, 2), (2048, 4));
        for i in 0..5_000 {
            let addr = rng.random_range(0..16 * 1024u64);
            let kind = if i % 3 == 0 {
                AccessKind::Write
            } else {
                AccessKind::Read
            };
            h.access(addr, 8, kind);
            assert!(h.is_inclusive(), "inclusion broken after access {i}");
        }
    }

    #[test]
    fn dirty_lines_are_written_back() {
        let mut h = Hierarchy::new(HierarchyConfig {
            levels: vec![CacheLevelConfig::new(128, 2, 2)],
            ..Default::default()
        })
        .unwrap();
        h.access(0, 8, AccessKind::Write);
        h.access(64, 8, AccessKind::Read);
        h.access(128, 8, AccessKind::Read);
        assert_eq!(h.stats().memory_writebacks, 1);
    }

    #[test]
    fn multi_line_access_takes_max() {
        let mut h = table5();
        h.access(0, 1, AccessKind::Read);
        let r = h.access(60, 8, AccessKind::Read);
        assert_eq!(r.lines_touched, 2);
        assert_eq!(r.hit_level, HitLevel::Memory);
        assert_eq!(r.latency_cycles, 247);
    }

    #[test]
    fn warm_working_set_has_no_misses() {
        let mut h = table5();
        for _ in 0..3 {
            for addr in (0..16 * 1024u64).step_by(8) {
                h.access(addr, 8, AccessKind::Read);
            }
        }
        // only the cold misses of the first pass
        assert_eq!(h.stats().levels[0].misses, 16 * 1024 / 64);
    }

    #[test]
    fn reset_clears_everything() {
        let mut h = table5();
        h.access(0x1000, 8, AccessKind::Write);
        h.reset();
        h.reset();
        assert_eq!(h.stats().levels, vec![LevelStats::default(); 2]);
        assert_eq!(h.stats().memory_reads, 0);
        let r = h.access(0x1000, 8, AccessKind::Read);
        assert_eq!(r.hit_level, HitLevel::Memory);
    }

    #[test]
    fn config_validation() {
        let mut cfg = HierarchyConfig::default();
        cfg.levels[0].capacity = 1000;
        assert!(matches!(
            cfg.validate(),
            Err(CacheError::Capacity { level: 0, .. })
        ));
        let mut cfg = HierarchyConfig::default();
        cfg.levels[1].line_size = 128;
        assert!(matches!(
            cfg.validate(),
            Err(CacheError::MixedLineSize { level: 1, .. })
        ));
        let cfg = HierarchyConfig {
            levels: vec![],
            ..Default::default()
        };
        assert_eq!(cfg.validate(), Err(CacheError::NoLevels));
        let cfg = HierarchyConfig {
            cpu_freq_ghz: 0.0,
            ..Default::default()
        };
        assert!(matches!(
            cfg.validate(),
            Err(CacheError::NonPositive { .. })
        ));
    }

    #[test]
    fn cycle_conversion() {
        assert_eq!(ns_to_cycles(75.0, 3.0), 225);
        assert_eq!(ns_to_cycles(70.0, 3.0), 210);
        assert_eq!(ns_to_cycles(-1.0, 3.0), 0);
        assert_eq!(ns_to_cycles(0.4, 1.0), 0);
    }
}
