//! Experiment configuration files.
//!
//! A config is a TOML document. Every section except `[layout]` and
//! `[region]` is optional; the cache defaults to a 32 KB 2-way L1
//! (2 cycles/miss), a 2 MB 8-way L2 (20 cycles/miss), 75 ns memory and a
//! 3 GHz clock, and DRAM defaults to a 32 Gb, 64K-row, 16-bank, 2-rank
//! device (2 KB rows) with approximation off. See `README.md` for the full
//! grammar.
//!
//! Parsing happens in two steps: serde reads the raw document, then
//! [`RawConfig::validate`] checks every field and produces an
//! [`Experiment`]. Every problem is reported with the key path it was
//! found at, before any simulation starts.

use std::fmt;
use std::path::{Path, PathBuf};

use gapsim_core::cache::{CacheError, CacheLevelConfig, HierarchyConfig};
use gapsim_core::dram::{DramError, DramGeometry, RowPolicy};
use gapsim_core::engine::{DramSetup, RunMode, SimConfig, DEFAULT_BUDGET_CYCLES};
use gapsim_core::layout::{
    build_region_map, ArrayGrouping, Criticality, LayoutError, MemberSpec, RegionSpec, RemapPlan,
    StructLayout, DEFAULT_ARRAY_ALIGN, DEFAULT_ARRAY_BASE,
};
use gapsim_core::workload::{WorkloadKind, WorkloadSpec};
use gapsim_core::MemoryAccess;
use serde::Deserialize;
use thiserror::Error;

use crate::trace_io;

/// A configuration problem at `path` (a dotted key path such as
/// `layout.members[2].size`).
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{path}: {message}")]
pub struct ConfigError {
    pub path: String,
    pub message: String,
}

impl ConfigError {
    pub fn new(path: impl Into<String>, message: impl fmt::Display) -> Self {
        Self {
            path: path.into(),
            message: message.to_string(),
        }
    }
}

/// An address written either as a TOML integer or as a `"0x..."` string
/// (for values that do not fit a signed 64-bit TOML integer).
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum Address {
    Int(u64),
    Text(String),
}

impl Address {
    fn resolve(&self, path: &str) -> Result<u64, ConfigError> {
        match self {
            Address::Int(v) => Ok(*v),
            Address::Text(s) => {
                let t = s.trim();
                let parsed = match t.strip_prefix("0x").or_else(|| t.strip_prefix("0X")) {
                    Some(hex) => u64::from_str_radix(&hex.replace('_', ""), 16),
                    None => t.replace('_', "").parse(),
                };
                parsed.map_err(|_| ConfigError::new(path, format!("`{s}` is not an address")))
            }
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawMember {
    pub name: String,
    pub size: u64,
    pub align: Option<u64>,
    #[serde(default = "yes")]
    pub critical: bool,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Copy, Default, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum RawGrouping {
    #[default]
    PerMember,
    Shared,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawLayout {
    pub members: Vec<RawMember>,
    #[serde(default)]
    pub grouping: RawGrouping,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawRegion {
    pub base: Address,
    pub elem_count: u64,
    pub array_base: Option<Address>,
    pub array_align: Option<u64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawPlan {
    #[serde(default)]
    pub remap: Vec<String>,
}

#[derive(Debug, Clone, Copy, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum RawWorkloadKind {
    SeqScan,
    PointerChase,
    Random,
    Trace,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawWorkload {
    pub kind: RawWorkloadKind,
    pub steps: Option<u64>,
    pub members: Option<Vec<String>>,
    pub trace_file: Option<PathBuf>,
    /// Affinity window reported by `simulate`.
    pub window: Option<usize>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawLevel {
    pub capacity: u64,
    pub associativity: u32,
    #[serde(default = "line64")]
    pub line_size: u64,
    pub miss_latency_cycles: u64,
    #[serde(default = "mshrs32")]
    pub mshrs: u32,
}

fn line64() -> u64 {
    64
}

fn mshrs32() -> u32 {
    32
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawCache {
    pub levels: Option<Vec<RawLevel>>,
    pub mem_ctrl_latency_ns: Option<f64>,
    pub cpu_freq_ghz: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawApprox {
    pub latency_delta_ns: f64,
    pub bit_error_rate: f64,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawDram {
    pub capacity_gbit: Option<f64>,
    pub rows: Option<u64>,
    pub banks: Option<u64>,
    pub ranks: Option<u64>,
    pub approx: Option<RawApprox>,
}

#[derive(Debug, Clone, Copy, Default, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum RawMode {
    #[default]
    FixedTrace,
    FixedBudget,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub mode: RawMode,
    pub budget_cycles: Option<u64>,
    pub warmup_ops: Option<u64>,
    pub output: Option<PathBuf>,
    pub layout: RawLayout,
    pub region: RawRegion,
    #[serde(default)]
    pub plan: RawPlan,
    pub workload: Option<RawWorkload>,
    #[serde(default)]
    pub cache: RawCache,
    #[serde(default)]
    pub dram: RawDram,
}

/// Where the trace of an experiment comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum TraceSource {
    Generated(WorkloadSpec),
    File {
        path: PathBuf,
        trace: Vec<MemoryAccess>,
    },
}

/// A fully validated experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct Experiment {
    pub layout: StructLayout,
    pub region: RegionSpec,
    pub plan: RemapPlan,
    pub workload: Option<TraceSource>,
    pub affinity_window: Option<usize>,
    pub sim: SimConfig,
    pub output: Option<PathBuf>,
}

impl Experiment {
    /// Reads and validates a config file. Relative trace paths resolve
    /// against the config file's directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::new(path.display().to_string(), e))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        Self::parse(&text, base)
    }

    pub fn parse(text: &str, base_dir: &Path) -> Result<Self, ConfigError> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| {
            let msg = e.message().to_string();
            let at = e
                .span()
                .map(|s| {
                    let line = text[..s.start].matches('\n').count() + 1;
                    format!(" (line {line})")
                })
                .unwrap_or_default();
            ConfigError::new("<config>", format!("{msg}{at}"))
        })?;
        raw.validate(base_dir)
    }

    /// Overrides the seed used for trace generation and error injection.
    pub fn set_seed(&mut self, seed: u64) {
        self.sim.seed = seed;
        if let Some(TraceSource::Generated(spec)) = &mut self.workload {
            spec.seed = seed;
        }
    }

    pub fn trace(&self) -> Result<Vec<MemoryAccess>, ConfigError> {
        match &self.workload {
            None => Err(ConfigError::new("workload", "missing [workload] section")),
            Some(TraceSource::File { trace, .. }) => Ok(trace.clone()),
            Some(TraceSource::Generated(spec)) => spec
                .generate(&self.layout)
                .map_err(|e| ConfigError::new("workload", e)),
        }
    }
}

fn positive(path: &str, value: u64) -> Result<u64, ConfigError> {
    if value == 0 {
        Err(ConfigError::new(path, "must be positive"))
    } else {
        Ok(value)
    }
}

impl RawConfig {
    pub fn validate(self, base_dir: &Path) -> Result<Experiment, ConfigError> {
        let layout = self.layout.validate()?;

        let grouping = match self.layout.grouping {
            RawGrouping::PerMember => ArrayGrouping::PerMember,
            RawGrouping::Shared => ArrayGrouping::Shared,
        };
        let region = self.region.validate(grouping)?;

        let mut plan = RemapPlan::identity(layout.len());
        for (i, name) in self.plan.remap.iter().enumerate() {
            let path = format!("plan.remap[{i}]");
            let m = layout
                .index_of(name)
                .ok_or_else(|| ConfigError::new(&path, format!("unknown member `{name}`")))?;
            plan = RemapPlan::from_flags(
                plan.flags()
                    .iter()
                    .enumerate()
                    .map(|(j, &f)| f || j == m)
                    .collect(),
            );
        }

        // The widest array footprint any plan can produce: everything but
        // member 0 moved out (and the configured plan itself).
        let widest = RemapPlan::from_flags((0..layout.len()).map(|i| i > 0).collect());
        for candidate in [&plan, &widest] {
            build_region_map(&layout, candidate, &region).map_err(|e| match e {
                LayoutError::ArrayOverlap { .. } => ConfigError::new("region.array_base", e),
                _ => ConfigError::new("region", e),
            })?;
        }

        let workload = self
            .workload
            .as_ref()
            .map(|w| w.validate(&layout, &region, self.seed, base_dir))
            .transpose()?;
        let affinity_window = match self.workload.as_ref().and_then(|w| w.window) {
            Some(0) => return Err(ConfigError::new("workload.window", "must be positive")),
            w => w,
        };

        let hierarchy = self.cache.validate()?;
        let dram = self.dram.validate()?;

        let mode = match self.mode {
            RawMode::FixedTrace => {
                if self.budget_cycles.is_some() {
                    return Err(ConfigError::new(
                        "budget_cycles",
                        "only valid with mode = \"fixed_budget\"",
                    ));
                }
                RunMode::FixedTrace {
                    warmup_ops: self.warmup_ops.unwrap_or(0),
                }
            }
            RawMode::FixedBudget => {
                if self.warmup_ops.is_some() {
                    return Err(ConfigError::new(
                        "warmup_ops",
                        "only valid with mode = \"fixed_trace\"",
                    ));
                }
                RunMode::FixedBudget {
                    cycles: positive(
                        "budget_cycles",
                        self.budget_cycles.unwrap_or(DEFAULT_BUDGET_CYCLES),
                    )?,
                }
            }
        };

        Ok(Experiment {
            layout,
            region,
            plan,
            workload,
            affinity_window,
            sim: SimConfig {
                hierarchy,
                dram,
                mode,
                seed: self.seed,
            },
            output: self.output,
        })
    }
}

impl RawLayout {
    fn validate(&self) -> Result<StructLayout, ConfigError> {
        if self.members.is_empty() {
            return Err(ConfigError::new(
                "layout.members",
                "needs at least one member",
            ));
        }
        let mut specs = Vec::with_capacity(self.members.len());
        for (i, m) in self.members.iter().enumerate() {
            let path = format!("layout.members[{i}]");
            if m.name.is_empty() {
                return Err(ConfigError::new(
                    format!("{path}.name"),
                    "must not be empty",
                ));
            }
            if self.members[..i].iter().any(|o| o.name == m.name) {
                return Err(ConfigError::new(
                    format!("{path}.name"),
                    format!("duplicate member `{}`", m.name),
                ));
            }
            positive(&format!("{path}.size"), m.size)?;
            let criticality = if m.critical {
                Criticality::Critical
            } else {
                Criticality::NonCritical
            };
            let mut spec = MemberSpec::new(m.name.clone(), m.size, criticality);
            if let Some(align) = m.align {
                if !align.is_power_of_two() {
                    return Err(ConfigError::new(
                        format!("{path}.align"),
                        format!("{align} is not a power of two"),
                    ));
                }
                spec = spec.with_align(align);
            }
            specs.push(spec);
        }
        StructLayout::new(specs).map_err(|e| ConfigError::new("layout.members", e))
    }
}

impl RawRegion {
    fn validate(&self, grouping: ArrayGrouping) -> Result<RegionSpec, ConfigError> {
        let base = self.base.resolve("region.base")?;
        let elem_count = positive("region.elem_count", self.elem_count)?;
        let array_base = match &self.array_base {
            Some(a) => a.resolve("region.array_base")?,
            None => DEFAULT_ARRAY_BASE,
        };
        let array_align = self.array_align.unwrap_or(DEFAULT_ARRAY_ALIGN);
        if !array_align.is_power_of_two() {
            return Err(ConfigError::new(
                "region.array_align",
                format!("{array_align} is not a power of two"),
            ));
        }
        Ok(RegionSpec::new(base, elem_count)
            .with_array_base(array_base)
            .with_array_align(array_align)
            .with_grouping(grouping))
    }
}

impl RawWorkload {
    fn validate(
        &self,
        layout: &StructLayout,
        region: &RegionSpec,
        seed: u64,
        base_dir: &Path,
    ) -> Result<TraceSource, ConfigError> {
        let members = |required: bool| -> Result<Vec<String>, ConfigError> {
            let names = match &self.members {
                Some(names) => names.clone(),
                None if required => {
                    return Err(ConfigError::new(
                        "workload.members",
                        "required for this workload kind",
                    ))
                }
                None => Vec::new(),
            };
            if required && names.is_empty() {
                return Err(ConfigError::new(
                    "workload.members",
                    "needs at least one member",
                ));
            }
            for (i, name) in names.iter().enumerate() {
                if layout.index_of(name).is_none() {
                    return Err(ConfigError::new(
                        format!("workload.members[{i}]"),
                        format!("unknown member `{name}`"),
                    ));
                }
            }
            Ok(names)
        };
        let steps = || -> Result<u64, ConfigError> {
            let steps = self.steps.ok_or_else(|| {
                ConfigError::new("workload.steps", "required for this workload kind")
            })?;
            positive("workload.steps", steps)
        };
        let generated = |kind| {
            TraceSource::Generated(WorkloadSpec {
                kind,
                base: region.orig_base,
                elem_count: region.elem_count,
                steps: self.steps.unwrap_or(0),
                seed,
            })
        };

        match self.kind {
            RawWorkloadKind::SeqScan => Ok(generated(WorkloadKind::SeqScan {
                members: members(true)?,
            })),
            RawWorkloadKind::Random => {
                steps()?;
                Ok(generated(WorkloadKind::Random {
                    members: members(true)?,
                }))
            }
            RawWorkloadKind::PointerChase => {
                steps()?;
                for name in ["score", "l", "r"] {
                    if layout.index_of(name).is_none() {
                        return Err(ConfigError::new(
                            "layout.members",
                            format!("pointer_chase needs a member named `{name}`"),
                        ));
                    }
                }
                if region.elem_count < 2 {
                    return Err(ConfigError::new(
                        "region.elem_count",
                        "pointer_chase needs at least 2 nodes",
                    ));
                }
                Ok(generated(WorkloadKind::PointerChase))
            }
            RawWorkloadKind::Trace => {
                let file = self.trace_file.as_ref().ok_or_else(|| {
                    ConfigError::new("workload.trace_file", "required for kind = \"trace\"")
                })?;
                let path = base_dir.join(file);
                let trace = trace_io::read_trace(&path)
                    .map_err(|e| ConfigError::new("workload.trace_file", e))?;
                if trace.is_empty() {
                    return Err(ConfigError::new("workload.trace_file", "trace is empty"));
                }
                Ok(TraceSource::File { path, trace })
            }
        }
    }
}

fn cache_error(e: CacheError) -> ConfigError {
    let path = match &e {
        CacheError::NoLevels => "cache.levels".to_string(),
        CacheError::LineSize { level, .. } | CacheError::MixedLineSize { level, .. } => {
            format!("cache.levels[{level}].line_size")
        }
        CacheError::Associativity { level } => format!("cache.levels[{level}].associativity"),
        CacheError::Capacity { level, .. } => format!("cache.levels[{level}].capacity"),
        CacheError::NonPositive { field, .. } => format!("cache.{field}"),
    };
    ConfigError::new(path, e)
}

impl RawCache {
    fn validate(&self) -> Result<HierarchyConfig, ConfigError> {
        let defaults = HierarchyConfig::default();
        let levels = match &self.levels {
            None => defaults.levels,
            Some(levels) => levels
                .iter()
                .map(|l| CacheLevelConfig {
                    capacity: l.capacity,
                    associativity: l.associativity,
                    line_size: l.line_size,
                    miss_latency_cycles: l.miss_latency_cycles,
                    mshrs: l.mshrs,
                })
                .collect(),
        };
        let cfg = HierarchyConfig {
            levels,
            mem_ctrl_latency_ns: self
                .mem_ctrl_latency_ns
                .unwrap_or(defaults.mem_ctrl_latency_ns),
            cpu_freq_ghz: self.cpu_freq_ghz.unwrap_or(defaults.cpu_freq_ghz),
        };
        cfg.validate().map_err(cache_error)?;
        Ok(cfg)
    }
}

impl RawDram {
    fn validate(&self) -> Result<DramSetup, ConfigError> {
        let d = DramGeometry::default();
        let gbit = self
            .capacity_gbit
            .unwrap_or(d.capacity_bits() as f64 / (1u64 << 30) as f64);
        let rows = positive("dram.rows", self.rows.unwrap_or(d.rows_per_bank()))?;
        let banks = positive("dram.banks", self.banks.unwrap_or(d.banks()))?;
        let ranks = positive("dram.ranks", self.ranks.unwrap_or(d.ranks()))?;
        let geometry = DramGeometry::from_gbit(gbit, rows, banks, ranks).map_err(|e| match e {
            DramError::FractionalCapacity(_) => ConfigError::new("dram.capacity_gbit", e),
            _ => ConfigError::new("dram", e),
        })?;
        let approx = self
            .approx
            .as_ref()
            .map(|a| {
                RowPolicy::approximate(a.latency_delta_ns, a.bit_error_rate).map_err(|e| match e {
                    DramError::ErrorRate(_) => ConfigError::new("dram.approx.bit_error_rate", e),
                    _ => ConfigError::new("dram.approx.latency_delta_ns", e),
                })
            })
            .transpose()?;
        Ok(DramSetup { geometry, approx })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const DEMO: &str = r#"
        seed = 7

        [layout]
        members = [
            { name = "p", size = 8 },
            { name = "v", size = 8, critical = false },
            { name = "id", size = 4 },
        ]

        [region]
        base = 0x40000
        elem_count = 16
        array_base = "0xffff0000"

        [plan]
        remap = ["v"]

        [workload]
        kind = "seq_scan"
        members = ["p", "v", "id"]
    "#;

    fn parse(text: &str) -> Result<Experiment, ConfigError> {
        Experiment::parse(text, Path::new("."))
    }

    fn err_path(text: &str) -> String {
        parse(text).unwrap_err().path
    }

    #[test]
    fn demo_config_parses_with_defaults() {
        let exp = parse(DEMO).unwrap();
        assert_eq!(exp.layout.stride(), 24);
        assert_eq!(exp.region.orig_base, 0x40000);
        assert_eq!(exp.region.array_base, 0xffff_0000);
        assert_eq!(exp.plan.mask(), 0b010);
        assert_eq!(exp.sim.hierarchy, HierarchyConfig::default());
        assert_eq!(exp.sim.dram.geometry.row_size(), 2048);
        assert_eq!(exp.sim.dram.approx, None);
        assert_eq!(exp.sim.mode, RunMode::FixedTrace { warmup_ops: 0 });
        assert_eq!(exp.sim.seed, 7);
        assert_eq!(exp.trace().unwrap().len(), 48);
    }

    #[test]
    fn unknown_plan_member_is_named() {
        let err = parse(&DEMO.replace(r#"remap = ["v"]"#, r#"remap = ["v", "w"]"#)).unwrap_err();
        assert_eq!(err.path, "plan.remap[1]");
        assert!(err.message.contains("`w`"));
    }

    #[test]
    fn field_errors_name_their_key() {
        let cases = [
            (DEMO.replace("size = 4 }", "size = 0 }"), "layout.members[2].size"),
            (DEMO.replace("size = 4 }", "size = 4, align = 3 }"), "layout.members[2].align"),
            (DEMO.replace(r#"name = "id""#, r#"name = "p""#), "layout.members[2].name"),
            (DEMO.replace("elem_count = 16", "elem_count = 0"), "region.elem_count"),
            (DEMO.replace(r#"array_base = "0xffff0000""#, "array_base = 0x40010"), "region.array_base"),
            (DEMO.replace(r#"members = ["p", "v", "id"]"#, r#"members = ["q"]"#), "workload.members[0]"),
            (DEMO.replace("seed = 7", "seed = 7\nmode = \"fixed_budget\"\nbudget_cycles = 0"), "budget_cycles"),
            (format!("{DEMO}\n[cache]\ncpu_freq_ghz = 0.0\n"), "cache.cpu_freq_ghz"),
            (
                format!("{DEMO}\n[[cache.levels]]\ncapacity = 1000\nassociativity = 2\nmiss_latency_cycles = 2\n"),
                "cache.levels[0].capacity",
            ),
            (format!("{DEMO}\n[dram]\nrows = 3\n"), "dram"),
            (
                format!("{DEMO}\n[dram.approx]\nlatency_delta_ns = -5.0\nbit_error_rate = 2.0\n"),
                "dram.approx.bit_error_rate",
            ),
        ];
        for (text, path) in cases {
            assert_eq!(err_path(&text), path);
        }
    }

    #[test]
    fn syntax_and_unknown_keys_are_rejected() {
        let err = parse(&DEMO.replace("seed = 7", "sede = 7")).unwrap_err();
        assert_eq!(err.path, "<config>");
        assert!(err.message.contains("sede"), "{}", err.message);
        assert!(parse("[layout").is_err());
    }

    #[test]
    fn pointer_chase_needs_node_members() {
        let text = DEMO.replace(
            r#"kind = "seq_scan""#,
            "kind = \"pointer_chase\"\nsteps = 10",
        );
        let err = parse(&text).unwrap_err();
        assert_eq!(err.path, "layout.members");
        assert!(err.message.contains("score"));
    }

    #[test]
    fn seed_override_reaches_generator() {
        let mut exp = parse(DEMO).unwrap();
        exp.set_seed(99);
        assert_eq!(exp.sim.seed, 99);
        match exp.workload {
            Some(TraceSource::Generated(spec)) => assert_eq!(spec.seed, 99),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn dram_section() {
        let exp = parse(&format!(
            "{DEMO}\n[dram]\ncapacity_gbit = 16\nrows = 131072\nbanks = 8\nranks = 1\n[dram.approx]\nlatency_delta_ns = -7.5\nbit_error_rate = 1e-4\n"
        ))
        .unwrap();
        assert_eq!(exp.sim.dram.geometry.row_size(), 2048);
        let approx = exp.sim.dram.approx.unwrap();
        assert_eq!(
            (approx.latency_delta_ns, approx.bit_error_rate),
            (-7.5, 1e-4)
        );
    }
}
