//! Struct layouts, remap plans and the address remapper.
//!
//! A [`RegionMap`] describes where every member of every element of one
//! array-of-structures region lives once a [`RemapPlan`] has been applied:
//! members that are not remapped stay packed in place at the original base
//! (as if the remapped members were never declared), and remapped members
//! move to separate arrays carved from an unused high address range.
//! [`RegionMap::translate`] rewrites accesses issued against the original
//! layout so that a cache model sees the converted layout.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use thiserror::Error;

use crate::access::MemoryAccess;

/// Upper bound on members per layout; plan masks are `u64`.
pub const MAX_MEMBERS: usize = 64;

/// Largest member count [`enumerate_plans`] accepts (2^19 canonical plans).
pub const MAX_ENUMERATED_MEMBERS: usize = 20;

/// Default base for remapped arrays, an address the workloads never use.
pub const DEFAULT_ARRAY_BASE: u64 = 0xffff_0000;

/// Default alignment of every remapped array (one cache line).
pub const DEFAULT_ARRAY_ALIGN: u64 = 64;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LayoutError {
    #[error("struct layout has no members")]
    Empty,
    #[error("struct layout has {0} members, at most {MAX_MEMBERS} are supported")]
    TooManyMembers(usize),
    #[error("member `{0}` has size 0")]
    ZeroSize(String),
    #[error("member `{name}` has alignment {align}, which is not a power of two")]
    BadAlign { name: String, align: u64 },
    #[error("member name `{0}` appears more than once")]
    DuplicateMember(String),
    #[error("unknown member `{0}`")]
    UnknownMember(String),
    #[error("remap plan has {found} flags but the layout has {expected} members")]
    PlanLength { expected: usize, found: usize },
    #[error("cannot enumerate plans for {0} members (supported: 1..={MAX_ENUMERATED_MEMBERS}); 2^(n-1) layouts would have to be simulated")]
    PlanExplosion(usize),
    #[error("region must contain at least one element")]
    ZeroElements,
    #[error("array alignment {0} is not a power of two")]
    BadArrayAlign(u64),
    #[error("array for `{member}` at [{start:#x}, {end:#x}) overlaps the original region [{region_start:#x}, {region_end:#x})")]
    ArrayOverlap {
        member: String,
        start: u64,
        end: u64,
        region_start: u64,
        region_end: u64,
    },
    #[error("address computation overflows 64 bits")]
    AddressOverflow,
    #[error("access of size 0")]
    ZeroSizeAccess,
    #[error("address {0:#x} does not hold any member byte of the converted layout")]
    NotInRegion(u64),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Criticality {
    Critical,
    NonCritical,
}

impl Criticality {
    pub fn is_critical(self) -> bool {
        matches!(self, Criticality::Critical)
    }
}

/// Natural C alignment of a scalar member: size rounded up to a power of
/// two, capped at 8 bytes.
pub fn default_align(size: u64) -> u64 {
    size.max(1).next_power_of_two().min(8)
}

fn align_up(value: u64, align: u64) -> Result<u64, LayoutError> {
    debug_assert!(align.is_power_of_two());
    value
        .checked_add(align - 1)
        .map(|v| v & !(align - 1))
        .ok_or(LayoutError::AddressOverflow)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MemberSpec {
    pub name: String,
    pub size: u64,
    pub align: u64,
    pub criticality: Criticality,
}

impl MemberSpec {
    pub fn new(name: impl Into<String>, size: u64, criticality: Criticality) -> Self {
        Self {
            name: name.into(),
            size,
            align: default_align(size),
            criticality,
        }
    }

    pub fn critical(name: impl Into<String>, size: u64) -> Self {
        Self::new(name, size, Criticality::Critical)
    }

    pub fn non_critical(name: impl Into<String>, size: u64) -> Self {
        Self::new(name, size, Criticality::NonCritical)
    }

    /// Overrides the natural alignment (any power of two is accepted).
    pub fn with_align(mut self, align: u64) -> Self {
        self.align = align;
        self
    }

    fn validate(&self) -> Result<(), LayoutError> {
        if self.size == 0 {
            return Err(LayoutError::ZeroSize(self.name.clone()));
        }
        if !self.align.is_power_of_two() {
            return Err(LayoutError::BadAlign {
                name: self.name.clone(),
                align: self.align,
            });
        }
        Ok(())
    }
}

/// Lays members out one after another with C rules: each member at the next
/// multiple of its alignment, the element padded to the largest alignment.
///
/// Returns the member offsets and the element stride.
pub fn compute_offsets(members: &[MemberSpec]) -> Result<(Vec<u64>, u64), LayoutError> {
    if members.is_empty() {
        return Err(LayoutError::Empty);
    }
    let mut offsets = Vec::with_capacity(members.len());
    let mut cursor = 0u64;
    let mut max_align = 1u64;
    for m in members {
        m.validate()?;
        cursor = align_up(cursor, m.align)?;
        offsets.push(cursor);
        cursor = cursor
            .checked_add(m.size)
            .ok_or(LayoutError::AddressOverflow)?;
        max_align = max_align.max(m.align);
    }
    Ok((offsets, align_up(cursor, max_align)?))
}

/// An ordered list of members with their derived offsets and stride.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StructLayout {
    members: Vec<MemberSpec>,
    offsets: Vec<u64>,
    stride: u64,
    align: u64,
}

impl StructLayout {
    pub fn new(members: Vec<MemberSpec>) -> Result<Self, LayoutError> {
        if members.len() > MAX_MEMBERS {
            return Err(LayoutError::TooManyMembers(members.len()));
        }
        for (i, m) in members.iter().enumerate() {
            if members[..i].iter().any(|o| o.name == m.name) {
                return Err(LayoutError::DuplicateMember(m.name.clone()));
            }
        }
        let (offsets, stride) = compute_offsets(&members)?;
        let align = members.iter().map(|m| m.align).max().unwrap_or(1);
        Ok(Self {
            members,
            offsets,
            stride,
            align,
        })
    }

    pub fn members(&self) -> &[MemberSpec] {
        &self.members
    }

    pub fn member(&self, index: usize) -> &MemberSpec {
        &self.members[index]
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn offsets(&self) -> &[u64] {
        &self.offsets
    }

    pub fn offset(&self, index: usize) -> u64 {
        self.offsets[index]
    }

    /// Element size including trailing padding.
    pub fn stride(&self) -> u64 {
        self.stride
    }

    pub fn align(&self) -> u64 {
        self.align
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.members.iter().position(|m| m.name == name)
    }

    pub fn require(&self, name: &str) -> Result<usize, LayoutError> {
        self.index_of(name)
            .ok_or_else(|| LayoutError::UnknownMember(name.into()))
    }

    /// Member holding byte `within` of an element, `None` for padding.
    pub fn member_at(&self, within: u64) -> Option<usize> {
        member_in(&self.offsets, |i| self.members[i].size, within)
    }
}

// Offsets are strictly increasing, so the candidate is the last member
// starting at or before `within`.
fn member_in(offsets: &[u64], size_of: impl Fn(usize) -> u64, within: u64) -> Option<usize> {
    let idx = offsets.partition_point(|&o| o <= within).checked_sub(1)?;
    (within < offsets[idx] + size_of(idx)).then_some(idx)
}

/// Per-member "remapped" flags. `true` moves the member to its own array.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RemapPlan {
    flags: Vec<bool>,
}

impl RemapPlan {
    pub fn identity(members: usize) -> Self {
        Self {
            flags: alloc::vec![false; members],
        }
    }

    pub fn from_flags(flags: Vec<bool>) -> Self {
        Self { flags }
    }

    /// Bit `i` of `mask` is the flag of member `i`.
    pub fn from_mask(members: usize, mask: u64) -> Self {
        Self {
            flags: (0..members).map(|i| mask >> i & 1 == 1).collect(),
        }
    }

    pub fn from_names<S: AsRef<str>>(
        layout: &StructLayout,
        names: &[S],
    ) -> Result<Self, LayoutError> {
        let mut plan = Self::identity(layout.len());
        for name in names {
            plan.flags[layout.require(name.as_ref())?] = true;
        }
        Ok(plan)
    }

    pub fn flags(&self) -> &[bool] {
        &self.flags
    }

    pub fn len(&self) -> usize {
        self.flags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flags.is_empty()
    }

    pub fn is_remapped(&self, member: usize) -> bool {
        self.flags[member]
    }

    pub fn mask(&self) -> u64 {
        self.flags
            .iter()
            .enumerate()
            .fold(0, |acc, (i, &f)| acc | (u64::from(f) << i))
    }

    pub fn is_identity(&self) -> bool {
        !self.flags.iter().any(|&f| f)
    }

    pub fn remapped(&self) -> impl Iterator<Item = usize> + '_ {
        self.flags
            .iter()
            .enumerate()
            .filter(|(_, &f)| f)
            .map(|(i, _)| i)
    }

    pub fn complement(&self) -> Self {
        Self {
            flags: self.flags.iter().map(|f| !f).collect(),
        }
    }

    /// Canonical representative of `{self, complement}`: member 0 not remapped.
    pub fn canonical(&self) -> Self {
        if self.flags.first().copied().unwrap_or(false) {
            self.complement()
        } else {
            self.clone()
        }
    }

    pub fn is_canonical(&self) -> bool {
        !self.flags.first().copied().unwrap_or(false)
    }

    /// Names of the remapped members, joined with `sep`.
    pub fn label(&self, layout: &StructLayout, sep: &str) -> String {
        let mut out = String::new();
        for (n, i) in self.remapped().enumerate() {
            if n > 0 {
                out.push_str(sep);
            }
            out.push_str(&layout.member(i).name);
        }
        out
    }

    fn check_len(&self, layout: &StructLayout) -> Result<(), LayoutError> {
        if self.len() != layout.len() {
            return Err(LayoutError::PlanLength {
                expected: layout.len(),
                found: self.len(),
            });
        }
        Ok(())
    }
}

/// All canonical plans for `members` members: `2^(members-1)` of them,
/// identity first, ordered by mask.
///
/// A plan and its complement split the members into the same two sets, so
/// only plans that keep member 0 in place are listed.
pub fn enumerate_plans(members: usize) -> Result<Vec<RemapPlan>, LayoutError> {
    if !(1..=MAX_ENUMERATED_MEMBERS).contains(&members) {
        return Err(LayoutError::PlanExplosion(members));
    }
    let count = 1u64 << (members - 1);
    Ok((0..count)
        .map(|m| RemapPlan::from_mask(members, m << 1))
        .collect())
}

/// How remapped members are stored.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum ArrayGrouping {
    /// Every remapped member gets its own array (structure of arrays).
    #[default]
    PerMember,
    /// All remapped members share one split-off array of structures, so a
    /// plan and its complement produce the same two groups.
    Shared,
}

/// Where a region lives and how its converted arrays are placed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RegionSpec {
    pub orig_base: u64,
    pub elem_count: u64,
    pub array_base: u64,
    pub array_align: u64,
    pub grouping: ArrayGrouping,
}

impl RegionSpec {
    pub fn new(orig_base: u64, elem_count: u64) -> Self {
        Self {
            orig_base,
            elem_count,
            array_base: DEFAULT_ARRAY_BASE,
            array_align: DEFAULT_ARRAY_ALIGN,
            grouping: ArrayGrouping::PerMember,
        }
    }

    pub fn with_array_base(mut self, base: u64) -> Self {
        self.array_base = base;
        self
    }

    pub fn with_array_align(mut self, align: u64) -> Self {
        self.array_align = align;
        self
    }

    pub fn with_grouping(mut self, grouping: ArrayGrouping) -> Self {
        self.grouping = grouping;
        self
    }
}

/// One contiguous sub-region of the converted layout: an array of elements
/// each holding `members` at `offsets`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SubRegion {
    pub base: u64,
    pub stride: u64,
    pub members: Vec<usize>,
    pub offsets: Vec<u64>,
    pub end: u64,
}

impl SubRegion {
    pub fn contains(&self, addr: u64) -> bool {
        (self.base..self.end).contains(&addr)
    }

    pub fn len_bytes(&self) -> u64 {
        self.end - self.base
    }

    /// Member (layout index) and byte offset within it at `addr`.
    fn locate(&self, layout: &StructLayout, addr: u64) -> Option<(u64, usize, u64)> {
        if !self.contains(addr) {
            return None;
        }
        let rel = addr - self.base;
        let (elem, within) = (rel / self.stride, rel % self.stride);
        let slot = member_in(
            &self.offsets,
            |i| layout.member(self.members[i]).size,
            within,
        )?;
        Some((elem, self.members[slot], within - self.offsets[slot]))
    }
}

/// Logical coordinates of one byte of a region.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct LogicalByte {
    pub element: u64,
    pub member: usize,
    pub offset: u64,
}

/// Concrete geometry of one array-of-structures region after a plan has
/// been applied. Sub-region 0 is the packed region at the original base;
/// the rest are the remapped arrays in carving order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RegionMap {
    layout: StructLayout,
    plan: RemapPlan,
    orig_base: u64,
    orig_end: u64,
    elem_count: u64,
    groups: Vec<SubRegion>,
    // member -> (group index, offset within the group's element)
    placement: Vec<(usize, u64)>,
}

fn group_of(
    layout: &StructLayout,
    members: Vec<usize>,
) -> Result<(Vec<u64>, u64, u64), LayoutError> {
    if members.is_empty() {
        return Ok((Vec::new(), 0, 1));
    }
    let specs: Vec<MemberSpec> = members.iter().map(|&m| layout.member(m).clone()).collect();
    let (offsets, stride) = compute_offsets(&specs)?;
    let align = specs.iter().map(|m| m.align).max().unwrap_or(1);
    Ok((offsets, stride, align))
}

/// Applies `plan` to the region described by `spec`.
///
/// Members that stay are re-laid out with the same C rules as if the
/// remapped ones were absent; remapped arrays are carved sequentially from
/// `spec.array_base`, each aligned to `max(array_align, member alignment)`.
pub fn build_region_map(
    layout: &StructLayout,
    plan: &RemapPlan,
    spec: &RegionSpec,
) -> Result<RegionMap, LayoutError> {
    plan.check_len(layout)?;
    if spec.elem_count == 0 {
        return Err(LayoutError::ZeroElements);
    }
    if !spec.array_align.is_power_of_two() {
        return Err(LayoutError::BadArrayAlign(spec.array_align));
    }
    let extent = |stride: u64| {
        spec.elem_count
            .checked_mul(stride)
            .ok_or(LayoutError::AddressOverflow)
    };
    let orig_end = spec
        .orig_base
        .checked_add(extent(layout.stride())?)
        .ok_or(LayoutError::AddressOverflow)?;

    let kept: Vec<usize> = (0..layout.len())
        .filter(|&m| !plan.is_remapped(m))
        .collect();
    let moved: Vec<usize> = plan.remapped().collect();
    let mut member_groups = Vec::new();
    member_groups.push(kept);
    match spec.grouping {
        ArrayGrouping::PerMember => member_groups.extend(moved.into_iter().map(|m| alloc::vec![m])),
        ArrayGrouping::Shared if !moved.is_empty() => member_groups.push(moved),
        ArrayGrouping::Shared => {}
    }

    let mut groups = Vec::with_capacity(member_groups.len());
    let mut placement = alloc::vec![(0usize, 0u64); layout.len()];
    let mut cursor = spec.array_base;
    for (g, members) in member_groups.into_iter().enumerate() {
        let (offsets, stride, align) = group_of(layout, members.clone())?;
        let base = if g == 0 {
            spec.orig_base
        } else {
            align_up(cursor, align.max(spec.array_align))?
        };
        let end = base
            .checked_add(extent(stride)?)
            .ok_or(LayoutError::AddressOverflow)?;
        if g > 0 {
            if base < orig_end && spec.orig_base < end {
                return Err(LayoutError::ArrayOverlap {
                    member: layout.member(members[0]).name.clone(),
                    start: base,
                    end,
                    region_start: spec.orig_base,
                    region_end: orig_end,
                });
            }
            cursor = end;
        }
        for (&m, &off) in members.iter().zip(&offsets) {
            placement[m] = (g, off);
        }
        groups.push(SubRegion {
            base,
            stride,
            members,
            offsets,
            end,
        });
    }

    Ok(RegionMap {
        layout: layout.clone(),
        plan: plan.clone(),
        orig_base: spec.orig_base,
        orig_end,
        elem_count: spec.elem_count,
        groups,
        placement,
    })
}

impl RegionMap {
    pub fn layout(&self) -> &StructLayout {
        &self.layout
    }

    pub fn plan(&self) -> &RemapPlan {
        &self.plan
    }

    pub fn orig_base(&self) -> u64 {
        self.orig_base
    }

    pub fn elem_count(&self) -> u64 {
        self.elem_count
    }

    /// `[start, end)` of the region in the original (unconverted) layout.
    pub fn original_extent(&self) -> (u64, u64) {
        (self.orig_base, self.orig_end)
    }

    /// Packed region first, then the remapped arrays.
    pub fn sub_regions(&self) -> &[SubRegion] {
        &self.groups
    }

    pub fn packed(&self) -> &SubRegion {
        &self.groups[0]
    }

    pub fn packed_stride(&self) -> u64 {
        self.groups[0].stride
    }

    /// Offset of `member` within a packed element, `None` if remapped.
    pub fn packed_offset(&self, member: usize) -> Option<u64> {
        let (g, off) = self.placement[member];
        (g == 0).then_some(off)
    }

    /// Base of the array holding `member`, `None` if it stays packed.
    pub fn array_base(&self, member: usize) -> Option<u64> {
        let (g, _) = self.placement[member];
        (g > 0).then(|| self.groups[g].base)
    }

    /// Converted address of byte 0 of `member` in element `element`.
    pub fn member_addr(&self, element: u64, member: usize) -> u64 {
        let (g, off) = self.placement[member];
        let group = &self.groups[g];
        group.base + element * group.stride + off
    }

    /// Groups of co-located members, sorted, independent of placement.
    pub fn grouping(&self) -> Vec<Vec<usize>> {
        let mut out: Vec<Vec<usize>> = self
            .groups
            .iter()
            .filter(|g| !g.members.is_empty())
            .map(|g| g.members.clone())
            .collect();
        out.sort();
        out
    }

    pub fn contains_original(&self, addr: u64) -> bool {
        (self.orig_base..self.orig_end).contains(&addr)
    }

    /// Logical coordinates of an address in the original layout, `None`
    /// outside the region or in padding.
    pub fn locate_original(&self, addr: u64) -> Option<LogicalByte> {
        if !self.contains_original(addr) {
            return None;
        }
        let rel = addr - self.orig_base;
        let stride = self.layout.stride();
        let within = rel % stride;
        let member = self.layout.member_at(within)?;
        Some(LogicalByte {
            element: rel / stride,
            member,
            offset: within - self.layout.offset(member),
        })
    }

    /// Bitmask of the members whose bytes `access` overlaps in the original
    /// layout (bit `i` = member `i`).
    pub fn members_touched(&self, access: &MemoryAccess) -> u64 {
        let start = access.addr.max(self.orig_base);
        let end = access.end().min(self.orig_end);
        let stride = self.layout.stride();
        let mut mask = 0u64;
        let mut cur = start;
        while cur < end {
            let within = (cur - self.orig_base) % stride;
            match self.layout.member_at(within) {
                Some(m) => {
                    mask |= 1 << m;
                    cur += self.layout.offset(m) + self.layout.member(m).size - within;
                }
                None => cur += 1,
            }
        }
        mask
    }

    /// Rewrites `access` into the converted layout.
    pub fn translate(&self, access: &MemoryAccess) -> Result<Vec<MemoryAccess>, LayoutError> {
        let mut out = Vec::with_capacity(1);
        self.translate_into(access, &mut out)?;
        Ok(out)
    }

    /// Appends the translated pieces of `access` to `out`.
    ///
    /// Bytes outside the region pass through unchanged. Inside it the
    /// access is split at member boundaries, pieces that land next to each
    /// other are merged back, and bytes that only cover padding are dropped
    /// (an access made only of padding is passed through as-is).
    pub fn translate_into(
        &self,
        access: &MemoryAccess,
        out: &mut Vec<MemoryAccess>,
    ) -> Result<(), LayoutError> {
        if access.size == 0 {
            return Err(LayoutError::ZeroSizeAccess);
        }
        let end = access.end();
        if self.plan.is_identity() || end <= self.orig_base || access.addr >= self.orig_end {
            out.push(*access);
            return Ok(());
        }

        let first = out.len();
        let emit = |out: &mut Vec<MemoryAccess>, addr: u64, len: u64| {
            if out.len() > first {
                let last = out.last_mut().expect("non-empty");
                if last.end() == addr {
                    last.size += len as u32;
                    return;
                }
            }
            out.push(MemoryAccess {
                addr,
                size: len as u32,
                ..*access
            });
        };

        let stride = self.layout.stride();
        let mut cur = access.addr;
        while cur < end {
            if cur < self.orig_base {
                let stop = end.min(self.orig_base);
                emit(out, cur, stop - cur);
                cur = stop;
                continue;
            }
            if cur >= self.orig_end {
                emit(out, cur, end - cur);
                break;
            }
            let rel = cur - self.orig_base;
            let (elem, within) = (rel / stride, rel % stride);
            match self.layout.member_at(within) {
                Some(m) => {
                    let in_member = within - self.layout.offset(m);
                    let len = (self.layout.member(m).size - in_member).min(end - cur);
                    emit(out, self.member_addr(elem, m) + in_member, len);
                    cur += len;
                }
                None => {
                    let next = self
                        .layout
                        .offsets()
                        .iter()
                        .copied()
                        .find(|&o| o > within)
                        .unwrap_or(stride);
                    cur += (next - within).min(end - cur);
                }
            }
        }
        if out.len() == first {
            out.push(*access);
        }
        Ok(())
    }

    /// Inverse of [`translate`](Self::translate) for a single byte of the
    /// converted layout.
    pub fn inverse_translate(&self, addr: u64) -> Result<LogicalByte, LayoutError> {
        self.groups
            .iter()
            .find_map(|g| g.locate(&self.layout, addr))
            .map(|(element, member, offset)| LogicalByte {
                element,
                member,
                offset,
            })
            .ok_or(LayoutError::NotInRegion(addr))
    }
}

impl fmt::Display for RegionMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (g, group) in self.groups.iter().enumerate() {
            let kind = if g == 0 { "packed" } else { "array" };
            write!(
                f,
                "{kind:6} [{:#x}, {:#x}) stride {:3}:",
                group.base, group.end, group.stride
            )?;
            for (&m, off) in group.members.iter().zip(&group.offsets) {
                write!(f, " {}@{}", self.layout.member(m).name, off)?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}
