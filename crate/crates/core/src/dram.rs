//! DRAM row geometry, criticality-aware row classification, per-row timing
//! policies and bit-error injection.
//!
//! Approximation is applied per row: a row either runs at nominal timing or
//! with a relaxed timing that trades a latency delta for a bit-error rate.
//! A row holding both critical and non-critical bytes must stay nominal,
//! which is exactly what limits how much non-critical data can be
//! approximated when members are interleaved.
//!
//! Addresses map to rows linearly (`addr / row_size`); bank and channel
//! interleaving are not modelled.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;
use core::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::access::MemoryAccess;
use crate::layout::RegionMap;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DramError {
    #[error("geometry dimensions must be positive")]
    ZeroDimension,
    #[error("{capacity_bits} bits do not divide into {rows} rows x {banks} banks x {ranks} ranks of whole bytes")]
    NonDivisible {
        capacity_bits: u64,
        rows: u64,
        banks: u64,
        ranks: u64,
    },
    #[error("capacity of {0} Gbit is not a whole number of bits")]
    FractionalCapacity(f64),
    #[error("bit error rate {0} is outside [0, 1]")]
    ErrorRate(f64),
    #[error("latency delta {0} ns is not finite")]
    LatencyDelta(f64),
    #[error("row policy for approximate rows must be in approximate mode")]
    NotApproximate,
}

/// Device organisation; the row size is derived from it.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DramGeometry {
    capacity_bits: u64,
    rows_per_bank: u64,
    banks: u64,
    ranks: u64,
    row_size_bytes: u64,
}

/// `capacity_bits / (rows × banks × ranks) / 8`, failing unless both
/// divisions are exact.
pub fn row_size(
    capacity_bits: u64,
    rows_per_bank: u64,
    banks: u64,
    ranks: u64,
) -> Result<u64, DramError> {
    let rows = rows_per_bank
        .checked_mul(banks)
        .and_then(|r| r.checked_mul(ranks))
        .filter(|&r| r > 0)
        .ok_or(DramError::ZeroDimension)?;
    if capacity_bits == 0 {
        return Err(DramError::ZeroDimension);
    }
    if !capacity_bits.is_multiple_of(rows) || !(capacity_bits / rows).is_multiple_of(8) {
        return Err(DramError::NonDivisible {
            capacity_bits,
            rows: rows_per_bank,
            banks,
            ranks,
        });
    }
    Ok(capacity_bits / rows / 8)
}

const GBIT: f64 = (1u64 << 30) as f64;

impl DramGeometry {
    pub fn new(
        capacity_bits: u64,
        rows_per_bank: u64,
        banks: u64,
        ranks: u64,
    ) -> Result<Self, DramError> {
        let row_size_bytes = row_size(capacity_bits, rows_per_bank, banks, ranks)?;
        Ok(Self {
            capacity_bits,
            rows_per_bank,
            banks,
            ranks,
            row_size_bytes,
        })
    }

    /// Capacity given in Gbit (2^30 bits); fractions are allowed as long as
    /// they resolve to whole bits.
    pub fn from_gbit(
        capacity_gbit: f64,
        rows_per_bank: u64,
        banks: u64,
        ranks: u64,
    ) -> Result<Self, DramError> {
        let bits = capacity_gbit * GBIT;
        if !(bits.is_finite() && bits >= 1.0) || bits != (bits as u64) as f64 {
            return Err(DramError::FractionalCapacity(capacity_gbit));
        }
        Self::new(bits as u64, rows_per_bank, banks, ranks)
    }

    /// 32 Gb, 64K rows, 16 banks, 2 ranks.
    pub fn micron_32gb() -> Self {
        Self::new(32 << 30, 64 << 10, 16, 2).expect("valid geometry")
    }

    /// 16 Gb, 128K rows, 8 banks, 1 rank.
    pub fn samsung_16gb() -> Self {
        Self::new(16 << 30, 128 << 10, 8, 1).expect("valid geometry")
    }

    pub fn capacity_bits(&self) -> u64 {
        self.capacity_bits
    }

    pub fn rows_per_bank(&self) -> u64 {
        self.rows_per_bank
    }

    pub fn banks(&self) -> u64 {
        self.banks
    }

    pub fn ranks(&self) -> u64 {
        self.ranks
    }

    pub fn row_size(&self) -> u64 {
        self.row_size_bytes
    }

    pub fn row_of(&self, addr: u64) -> u64 {
        addr_to_row(addr, self.row_size_bytes)
    }
}

impl Default for DramGeometry {
    fn default() -> Self {
        Self::micron_32gb()
    }
}

pub fn addr_to_row(addr: u64, row_size: u64) -> u64 {
    addr / row_size
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum RowMode {
    Nominal,
    Approximate,
}

/// Timing/reliability of one row: a memory-latency delta (negative is
/// faster) and an independent per-bit flip probability per access.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RowPolicy {
    pub mode: RowMode,
    pub latency_delta_ns: f64,
    pub bit_error_rate: f64,
}

impl RowPolicy {
    pub const NOMINAL: RowPolicy = RowPolicy {
        mode: RowMode::Nominal,
        latency_delta_ns: 0.0,
        bit_error_rate: 0.0,
    };

    pub fn nominal() -> Self {
        Self::NOMINAL
    }

    pub fn approximate(latency_delta_ns: f64, bit_error_rate: f64) -> Result<Self, DramError> {
        if !latency_delta_ns.is_finite() {
            return Err(DramError::LatencyDelta(latency_delta_ns));
        }
        if !(0.0..=1.0).contains(&bit_error_rate) {
            return Err(DramError::ErrorRate(bit_error_rate));
        }
        Ok(Self {
            mode: RowMode::Approximate,
            latency_delta_ns,
            bit_error_rate,
        })
    }

    pub fn is_approximate(&self) -> bool {
        self.mode == RowMode::Approximate
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum RowTag {
    CriticalOnly,
    NonCriticalOnly,
    Mixed,
    /// Overlapped by a sub-region but holding only padding.
    Untouched,
}

impl fmt::Display for RowTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RowTag::CriticalOnly => "critical-only",
            RowTag::NonCriticalOnly => "noncritical-only",
            RowTag::Mixed => "mixed",
            RowTag::Untouched => "untouched",
        })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct RowBytes {
    pub critical: u64,
    pub noncritical: u64,
}

impl RowBytes {
    pub fn tag(&self) -> RowTag {
        match (self.critical > 0, self.noncritical > 0) {
            (true, true) => RowTag::Mixed,
            (true, false) => RowTag::CriticalOnly,
            (false, true) => RowTag::NonCriticalOnly,
            (false, false) => RowTag::Untouched,
        }
    }
}

/// Critical/non-critical byte counts of every row overlapped by a region's
/// sub-regions.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RowClassification {
    row_size: u64,
    rows: BTreeMap<u64, RowBytes>,
}

impl RowClassification {
    pub fn row_size(&self) -> u64 {
        self.row_size
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn tag(&self, row: u64) -> Option<RowTag> {
        self.rows.get(&row).map(RowBytes::tag)
    }

    pub fn bytes(&self, row: u64) -> Option<RowBytes> {
        self.rows.get(&row).copied()
    }

    /// `(row, bytes, tag)` in ascending row order.
    pub fn iter(&self) -> impl Iterator<Item = (u64, RowBytes, RowTag)> + '_ {
        self.rows.iter().map(|(&r, &b)| (r, b, b.tag()))
    }

    pub fn count(&self, tag: RowTag) -> usize {
        self.rows.values().filter(|b| b.tag() == tag).count()
    }

    pub fn total(&self) -> RowBytes {
        self.rows
            .values()
            .fold(RowBytes::default(), |acc, b| RowBytes {
                critical: acc.critical + b.critical,
                noncritical: acc.noncritical + b.noncritical,
            })
    }
}

/// Tags every row overlapped by the packed region or a remapped array of
/// `rm` by the criticality of the member bytes it holds.
pub fn classify_rows(rm: &RegionMap, geometry: &DramGeometry) -> RowClassification {
    let row_size = geometry.row_size();
    let layout = rm.layout();
    let mut rows = BTreeMap::new();
    for sub in rm.sub_regions() {
        if sub.members.is_empty() || sub.len_bytes() == 0 {
            continue;
        }
        let first_row = sub.base / row_size;
        let last_row = (sub.end - 1) / row_size;
        let mut local = alloc::vec![RowBytes::default(); (last_row - first_row + 1) as usize];
        for elem in 0..rm.elem_count() {
            let elem_base = sub.base + elem * sub.stride;
            for (&m, &off) in sub.members.iter().zip(&sub.offsets) {
                let member = layout.member(m);
                let mut start = elem_base + off;
                let end = start + member.size;
                while start < end {
                    let row = start / row_size;
                    let stop = end.min((row + 1) * row_size);
                    let counts = &mut local[(row - first_row) as usize];
                    if member.criticality.is_critical() {
                        counts.critical += stop - start;
                    } else {
                        counts.noncritical += stop - start;
                    }
                    start = stop;
                }
            }
        }
        for (i, counts) in local.into_iter().enumerate() {
            let entry: &mut RowBytes = rows.entry(first_row + i as u64).or_default();
            entry.critical += counts.critical;
            entry.noncritical += counts.noncritical;
        }
    }
    RowClassification { row_size, rows }
}

/// Fraction of non-critical bytes that live in noncritical-only rows and
/// can therefore be approximated. 1.0 means no granularity gap; a layout
/// without non-critical bytes is vacuously 1.0.
pub fn gap_metric(cls: &RowClassification) -> f64 {
    let total = cls.total().noncritical;
    if total == 0 {
        return 1.0;
    }
    let approximable: u64 = cls
        .rows
        .values()
        .filter(|b| b.tag() == RowTag::NonCriticalOnly)
        .map(|b| b.noncritical)
        .sum();
    approximable as f64 / total as f64
}

/// Per-row policies; rows not listed are nominal.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PolicyTable {
    row_size: u64,
    approximate: BTreeMap<u64, RowPolicy>,
}

impl PolicyTable {
    /// A table in which every row is nominal.
    pub fn all_nominal(row_size: u64) -> Self {
        Self {
            row_size,
            approximate: BTreeMap::new(),
        }
    }

    pub fn row_size(&self) -> u64 {
        self.row_size
    }

    pub fn policy(&self, row: u64) -> RowPolicy {
        self.approximate
            .get(&row)
            .copied()
            .unwrap_or(RowPolicy::NOMINAL)
    }

    pub fn policy_for_addr(&self, addr: u64) -> RowPolicy {
        if self.approximate.is_empty() {
            return RowPolicy::NOMINAL;
        }
        self.policy(addr_to_row(addr, self.row_size))
    }

    pub fn approximate_rows(&self) -> impl Iterator<Item = u64> + '_ {
        self.approximate.keys().copied()
    }

    pub fn approximate_count(&self) -> usize {
        self.approximate.len()
    }

    pub fn is_all_nominal(&self) -> bool {
        self.approximate.is_empty()
    }
}

/// Gives `approx` to every noncritical-only row. Mixed, critical-only and
/// untouched rows stay nominal.
pub fn assign_policies(
    cls: &RowClassification,
    approx: RowPolicy,
) -> Result<PolicyTable, DramError> {
    if !approx.is_approximate() {
        return Err(DramError::NotApproximate);
    }
    let approximate = cls
        .iter()
        .filter(|&(_, _, tag)| tag == RowTag::NonCriticalOnly)
        .map(|(row, _, _)| (row, approx))
        .collect();
    Ok(PolicyTable {
        row_size: cls.row_size,
        approximate,
    })
}

/// One injected bit flip.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Flip {
    pub op_index: u64,
    /// Byte address of the flipped bit.
    pub addr: u64,
    /// Bit within that byte, 0 = least significant.
    pub bit: u8,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct FlipLog {
    pub seed: u64,
    pub flips: Vec<Flip>,
}

/// Deterministic per-bit Bernoulli error source. Random numbers are only
/// drawn for bits in approximate rows with a non-zero rate, so runs that
/// never touch such rows consume no randomness.
#[derive(Clone, Debug)]
pub struct ErrorInjector {
    seed: u64,
    rng: ChaCha8Rng,
}

impl ErrorInjector {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Flips each bit of `access` lying in an approximate row with that
    /// row's error rate; appends the flips to `out` and returns how many.
    pub fn inject(
        &mut self,
        access: &MemoryAccess,
        table: &PolicyTable,
        out: &mut Vec<Flip>,
    ) -> usize {
        if table.is_all_nominal() {
            return 0;
        }
        let before = out.len();
        for addr in access.addr..access.end() {
            let policy = table.policy_for_addr(addr);
            if !policy.is_approximate() || policy.bit_error_rate <= 0.0 {
                continue;
            }
            for bit in 0..8u8 {
                if self.rng.random_bool(policy.bit_error_rate) {
                    out.push(Flip {
                        op_index: access.op_index,
                        addr,
                        bit,
                    });
                }
            }
        }
        out.len() - before
    }
}

/// Injects errors for every access in `trace` with a fresh RNG seeded by `seed`.
pub fn inject_errors(trace: &[MemoryAccess], table: &PolicyTable, seed: u64) -> FlipLog {
    let mut injector = ErrorInjector::new(seed);
    let mut flips = Vec::new();
    for access in trace {
        injector.inject(access, table, &mut flips);
    }
    FlipLog { seed, flips }
}
