//! Runs traces through the remapper, the cache hierarchy and the DRAM row
//! policies; sweeps every canonical remap plan; computes member affinity.
//!
//! Timing is an in-order blocking model: every trace op costs one cycle
//! plus the latency of its slowest translated piece. Normalised results
//! compare plans against the identity plan and are counted in logical
//! trace ops, before the remapper splits any access.

use alloc::string::String;
use alloc::vec::Vec;
use core::cmp::Ordering;

use thiserror::Error;

use crate::access::MemoryAccess;
use crate::cache::{ns_to_cycles, CacheError, Hierarchy, HierarchyConfig, LevelStats};
use crate::dram::{
    assign_policies, classify_rows, DramError, DramGeometry, ErrorInjector, FlipLog, PolicyTable,
    RowPolicy,
};
use crate::layout::{
    build_region_map, enumerate_plans, ArrayGrouping, LayoutError, RegionSpec, RemapPlan,
    StructLayout,
};

/// Default cycle budget for [`RunMode::FixedBudget`].
pub const DEFAULT_BUDGET_CYCLES: u64 = 100_000_000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EngineError {
    #[error("trace is empty")]
    EmptyTrace,
    #[error("cycle budget must be positive")]
    ZeroBudget,
    #[error("warmup of {warmup} ops leaves nothing of a {len}-op trace to measure")]
    WarmupTooLong { warmup: u64, len: u64 },
    #[error("affinity window must be at least 1 op")]
    ZeroWindow,
    #[error("sweep produced no identity-plan report")]
    MissingIdentity,
    #[error(transparent)]
    Layout(#[from] LayoutError),
    #[error(transparent)]
    Cache(#[from] CacheError),
    #[error(transparent)]
    Dram(#[from] DramError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RunMode {
    /// Run the whole trace; the first `warmup_ops` ops are simulated but
    /// their cycles are not counted.
    FixedTrace { warmup_ops: u64 },
    /// Run until `cycles` are spent; the op that would overrun is not counted.
    FixedBudget { cycles: u64 },
}

impl Default for RunMode {
    fn default() -> Self {
        RunMode::FixedTrace { warmup_ops: 0 }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct DramSetup {
    pub geometry: DramGeometry,
    /// Policy for noncritical-only rows; `None` keeps every row nominal.
    pub approx: Option<RowPolicy>,
}

/// Everything about a run except the trace, layout, region and plan.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SimConfig {
    pub hierarchy: HierarchyConfig,
    pub dram: DramSetup,
    pub mode: RunMode,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimReport {
    pub plan: RemapPlan,
    /// Names of the remapped members, in layout order.
    pub remapped: Vec<String>,
    pub total_cycles: u64,
    pub ops_completed: u64,
    pub trace_ops: u64,
    /// Accesses issued to the cache after translation.
    pub translated_accesses: u64,
    pub levels: Vec<LevelStats>,
    pub memory_reads: u64,
    pub memory_writebacks: u64,
    pub approximate_rows: usize,
    pub flips: FlipLog,
    /// Throughput relative to the identity plan (1.0 = no change, lower is
    /// slower). Set by [`finish_sweep`] / [`normalize`]; 1.0 otherwise.
    pub normalized_ops: f64,
}

impl SimReport {
    pub fn plan_mask(&self) -> u64 {
        self.plan.mask()
    }

    pub fn flip_count(&self) -> u64 {
        self.flips.flips.len() as u64
    }

    /// Same measurements, ignoring plan identity and normalisation.
    pub fn same_measurements(&self, other: &SimReport) -> bool {
        self.total_cycles == other.total_cycles
            && self.ops_completed == other.ops_completed
            && self.translated_accesses == other.translated_accesses
            && self.levels == other.levels
            && self.memory_reads == other.memory_reads
            && self.memory_writebacks == other.memory_writebacks
            && self.approximate_rows == other.approximate_rows
            && self.flips.flips == other.flips.flips
    }
}

/// Simulates `trace` (original-layout addresses) with `plan` applied to
/// the region described by `region`.
///
/// With [`ArrayGrouping::Shared`] the plan is replaced by its canonical
/// form first, since a plan and its complement describe the same layout.
pub fn run(
    trace: &[MemoryAccess],
    layout: &StructLayout,
    plan: &RemapPlan,
    region: &RegionSpec,
    cfg: &SimConfig,
) -> Result<SimReport, EngineError> {
    if trace.is_empty() {
        return Err(EngineError::EmptyTrace);
    }
    match cfg.mode {
        RunMode::FixedBudget { cycles: 0 } => return Err(EngineError::ZeroBudget),
        RunMode::FixedTrace { warmup_ops } if warmup_ops >= trace.len() as u64 => {
            return Err(EngineError::WarmupTooLong {
                warmup: warmup_ops,
                len: trace.len() as u64,
            })
        }
        _ => {}
    }
    let effective = match region.grouping {
        ArrayGrouping::Shared => plan.canonical(),
        ArrayGrouping::PerMember => plan.clone(),
    };
    let rm = build_region_map(layout, &effective, region)?;
    let mut cache = Hierarchy::new(cfg.hierarchy.clone())?;
    let table = match cfg.dram.approx {
        Some(policy) => assign_policies(&classify_rows(&rm, &cfg.dram.geometry), policy)?,
        None => PolicyTable::all_nominal(cfg.dram.geometry.row_size()),
    };

    let mem_ns = cfg.hierarchy.mem_ctrl_latency_ns;
    let ghz = cfg.hierarchy.cpu_freq_ghz;
    let nominal_latency = ns_to_cycles(mem_ns, ghz);
    let memory_latency = |line_addr: u64| {
        let policy = table.policy_for_addr(line_addr);
        if policy.is_approximate() {
            ns_to_cycles(mem_ns + policy.latency_delta_ns, ghz)
        } else {
            nominal_latency
        }
    };

    let mut injector = ErrorInjector::new(cfg.seed);
    let mut flips = Vec::new();
    let mut pieces = Vec::with_capacity(4);
    let mut total_cycles = 0u64;
    let mut ops_completed = 0u64;
    let mut translated = 0u64;

    for (i, access) in trace.iter().enumerate() {
        pieces.clear();
        rm.translate_into(access, &mut pieces)?;
        let mut latency = 0;
        let mut op_flips = Vec::new();
        for piece in &pieces {
            let r = cache.access_with(
                piece.addr,
                u64::from(piece.size),
                piece.kind,
                memory_latency,
            );
            latency = latency.max(r.latency_cycles);
            injector.inject(piece, &table, &mut op_flips);
        }
        let cost = 1 + latency;
        match cfg.mode {
            RunMode::FixedTrace { warmup_ops } => {
                if i as u64 >= warmup_ops {
                    total_cycles += cost;
                }
            }
            RunMode::FixedBudget { cycles } => {
                if total_cycles + cost > cycles {
                    break;
                }
                total_cycles += cost;
            }
        }
        ops_completed += 1;
        translated += pieces.len() as u64;
        flips.append(&mut op_flips);
    }

    let stats = cache.stats();
    Ok(SimReport {
        remapped: plan
            .remapped()
            .map(|m| layout.member(m).name.clone())
            .collect(),
        plan: plan.clone(),
        total_cycles,
        ops_completed,
        trace_ops: trace.len() as u64,
        translated_accesses: translated,
        levels: stats.levels.clone(),
        memory_reads: stats.memory_reads,
        memory_writebacks: stats.memory_writebacks,
        approximate_rows: table.approximate_count(),
        flips: FlipLog {
            seed: cfg.seed,
            flips,
        },
        normalized_ops: 1.0,
    })
}

/// Throughput of `report` relative to `baseline`: ops completed within the
/// budget, or inverse cycles for a fixed trace.
pub fn normalize(report: &SimReport, baseline: &SimReport, mode: RunMode) -> f64 {
    match mode {
        RunMode::FixedBudget { .. } => report.ops_completed as f64 / baseline.ops_completed as f64,
        RunMode::FixedTrace { .. } => baseline.total_cycles as f64 / report.total_cycles as f64,
    }
}

/// Mean of every numeric column over a sweep.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SweepAverage {
    pub total_cycles: f64,
    pub ops_completed: f64,
    pub level_misses: Vec<f64>,
    pub memory_reads: f64,
    pub flips: f64,
    pub normalized_ops: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepResult {
    /// Ascending by `normalized_ops` (largest slowdown first), ties by mask.
    pub reports: Vec<SimReport>,
    pub average: SweepAverage,
}

impl SweepResult {
    pub fn identity(&self) -> Option<&SimReport> {
        self.reports.iter().find(|r| r.plan.is_identity())
    }
}

/// Normalises `reports` against the identity plan among them, sorts them
/// and computes the average row. Input order does not matter.
pub fn finish_sweep(
    mut reports: Vec<SimReport>,
    mode: RunMode,
) -> Result<SweepResult, EngineError> {
    let baseline = reports
        .iter()
        .find(|r| r.plan.is_identity())
        .cloned()
        .ok_or(EngineError::MissingIdentity)?;
    for r in &mut reports {
        r.normalized_ops = if r.plan.is_identity() {
            1.0
        } else {
            normalize(r, &baseline, mode)
        };
    }
    reports.sort_by(|a, b| {
        a.normalized_ops
            .total_cmp(&b.normalized_ops)
            .then_with(|| a.plan_mask().cmp(&b.plan_mask()))
    });

    let n = reports.len() as f64;
    let levels = baseline.levels.len();
    let mean = |f: &dyn Fn(&SimReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
    let average = SweepAverage {
        total_cycles: mean(&|r| r.total_cycles as f64),
        ops_completed: mean(&|r| r.ops_completed as f64),
        level_misses: (0..levels)
            .map(|l| mean(&|r| r.levels[l].misses as f64))
            .collect(),
        memory_reads: mean(&|r| r.memory_reads as f64),
        flips: mean(&|r| r.flip_count() as f64),
        normalized_ops: mean(&|r| r.normalized_ops),
    };
    Ok(SweepResult { reports, average })
}

/// Runs every canonical plan of `layout` over the same trace, one after
/// another. `gapsim` has a parallel variant producing identical output.
pub fn sweep(
    trace: &[MemoryAccess],
    layout: &StructLayout,
    region: &RegionSpec,
    cfg: &SimConfig,
) -> Result<SweepResult, EngineError> {
    let reports = enumerate_plans(layout.len())?
        .iter()
        .map(|plan| run(trace, layout, plan, region, cfg))
        .collect::<Result<Vec<_>, _>>()?;
    finish_sweep(reports, cfg.mode)
}

/// Member access frequency and co-access counts.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AffinityReport {
    pub window: usize,
    /// Accesses touching each member.
    pub frequency: Vec<u64>,
    /// `matrix[a][b]`: windows in which both `a` and `b` were touched;
    /// the diagonal holds `frequency`.
    pub matrix: Vec<Vec<u64>>,
}

impl AffinityReport {
    pub fn get(&self, a: usize, b: usize) -> u64 {
        self.matrix[a][b]
    }
}

/// Splits the trace into consecutive non-overlapping windows of `window`
/// ops and counts, for each member pair, the windows touching both.
/// Accesses outside the region are ignored.
pub fn affinity(
    trace: &[MemoryAccess],
    layout: &StructLayout,
    region: &RegionSpec,
    window: usize,
) -> Result<AffinityReport, EngineError> {
    if window == 0 {
        return Err(EngineError::ZeroWindow);
    }
    let rm = build_region_map(layout, &RemapPlan::identity(layout.len()), region)?;
    let n = layout.len();
    let mut frequency = alloc::vec![0u64; n];
    let mut matrix = alloc::vec![alloc::vec![0u64; n]; n];
    for chunk in trace.chunks(window) {
        let mut seen = 0u64;
        for access in chunk {
            let touched = rm.members_touched(access);
            for m in bits(touched) {
                frequency[m] += 1;
            }
            seen |= touched;
        }
        for a in bits(seen) {
            for b in bits(seen) {
                if a != b {
                    matrix[a][b] += 1;
                }
            }
        }
    }
    for (m, &f) in frequency.iter().enumerate() {
        matrix[m][m] = f;
    }
    Ok(AffinityReport {
        window,
        frequency,
        matrix,
    })
}

fn bits(mask: u64) -> impl Iterator<Item = usize> + Clone {
    (0..64).filter(move |i| mask >> i & 1 == 1)
}

/// Orders reports by plan mask, the order plans are enumerated in.
pub fn by_plan_mask(a: &SimReport, b: &SimReport) -> Ordering {
    a.plan_mask().cmp(&b.plan_mask())
}
