//! Deterministic synthetic traces over one array-of-structures region.
//!
//! All addresses are in the original (unconverted) layout; the remapper in
//! [`crate::layout`] is applied later by the engine.

use alloc::string::String;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::access::MemoryAccess;
use crate::layout::StructLayout;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum WorkloadError {
    #[error("unknown member `{0}`")]
    UnknownMember(String),
    #[error("workload must touch at least one member")]
    NoMembers,
    #[error("pointer chase needs at least 2 nodes, got {0}")]
    TooFewNodes(u64),
    #[error("element count must be positive")]
    ZeroElements,
    #[error("step count must be positive")]
    ZeroSteps,
    #[error("member `{name}` has size {size}; trace accesses are at most 2^32-1 bytes")]
    MemberTooLarge { name: String, size: u64 },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum WorkloadKind {
    /// Every element in order, reading `members` of each.
    SeqScan { members: Vec<String> },
    /// Random walk over a binary node graph (needs `score`, `l`, `r`).
    PointerChase,
    /// Uniformly random element and member per step.
    Random { members: Vec<String> },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WorkloadSpec {
    pub kind: WorkloadKind,
    pub base: u64,
    pub elem_count: u64,
    /// Steps for pointer chase and random; ignored by the scan.
    pub steps: u64,
    pub seed: u64,
}

impl WorkloadSpec {
    pub fn generate(&self, layout: &StructLayout) -> Result<Vec<MemoryAccess>, WorkloadError> {
        match &self.kind {
            WorkloadKind::SeqScan { members } => {
                gen_seq_scan(layout, self.base, self.elem_count, members)
            }
            WorkloadKind::PointerChase => {
                gen_pointer_chase(layout, self.base, self.elem_count, self.steps, self.seed)
            }
            WorkloadKind::Random { members } => gen_random(
                layout,
                self.base,
                self.elem_count,
                self.steps,
                members,
                self.seed,
            ),
        }
    }
}

// (offset, size) of each named member
fn resolve<S: AsRef<str>>(
    layout: &StructLayout,
    names: &[S],
) -> Result<Vec<(u64, u32)>, WorkloadError> {
    if names.is_empty() {
        return Err(WorkloadError::NoMembers);
    }
    names
        .iter()
        .map(|n| {
            let name = n.as_ref();
            let idx = layout
                .index_of(name)
                .ok_or_else(|| WorkloadError::UnknownMember(name.into()))?;
            let size = layout.member(idx).size;
            let size = u32::try_from(size).map_err(|_| WorkloadError::MemberTooLarge {
                name: name.into(),
                size,
            })?;
            Ok((layout.offset(idx), size))
        })
        .collect()
}

/// Reads `members` of every element in ascending element order.
pub fn gen_seq_scan<S: AsRef<str>>(
    layout: &StructLayout,
    base: u64,
    elem_count: u64,
    members: &[S],
) -> Result<Vec<MemoryAccess>, WorkloadError> {
    let fields = resolve(layout, members)?;
    if elem_count == 0 {
        return Err(WorkloadError::ZeroElements);
    }
    let stride = layout.stride();
    let mut trace = Vec::with_capacity((elem_count as usize).saturating_mul(fields.len()));
    for elem in 0..elem_count {
        for &(offset, size) in &fields {
            let op = trace.len() as u64;
            trace.push(MemoryAccess::read(op, base + elem * stride + offset, size));
        }
    }
    Ok(trace)
}

/// Tree-walk microbenchmark: each step reads the current node's `score`
/// and then its `l` or `r` pointer, and moves to that child.
///
/// Node scores are drawn uniformly from `[0, 1)` and both children of every
/// node are wired to uniformly random nodes, all up front. The walk starts
/// at node 0 and takes `l` when the score exceeds a threshold drawn fresh
/// each step, so the choice stays unpredictable even when a node is
/// revisited.
pub fn gen_pointer_chase(
    layout: &StructLayout,
    base: u64,
    node_count: u64,
    steps: u64,
    seed: u64,
) -> Result<Vec<MemoryAccess>, WorkloadError> {
    let fields = resolve(layout, &["score", "l", "r"])?;
    let (score, left, right) = (fields[0], fields[1], fields[2]);
    if node_count < 2 {
        return Err(WorkloadError::TooFewNodes(node_count));
    }
    if steps == 0 {
        return Err(WorkloadError::ZeroSteps);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scores: Vec<f64> = (0..node_count).map(|_| rng.random()).collect();
    let children: Vec<[u64; 2]> = (0..node_count)
        .map(|_| {
            [
                rng.random_range(0..node_count),
                rng.random_range(0..node_count),
            ]
        })
        .collect();

    let stride = layout.stride();
    let mut trace = Vec::with_capacity((steps as usize).saturating_mul(2));
    let mut node = 0u64;
    for _ in 0..steps {
        let at = base + node * stride;
        let op = trace.len() as u64;
        trace.push(MemoryAccess::read(op, at + score.0, score.1));
        let threshold: f64 = rng.random();
        let (ptr, next) = if scores[node as usize] > threshold {
            (left, children[node as usize][0])
        } else {
            (right, children[node as usize][1])
        };
        trace.push(MemoryAccess::read(op + 1, at + ptr.0, ptr.1));
        node = next;
    }
    Ok(trace)
}

/// `steps` reads of a uniformly random member (from `members`) of a
/// uniformly random element.
pub fn gen_random<S: AsRef<str>>(
    layout: &StructLayout,
    base: u64,
    elem_count: u64,
    steps: u64,
    members: &[S],
    seed: u64,
) -> Result<Vec<MemoryAccess>, WorkloadError> {
    let fields = resolve(layout, members)?;
    if elem_count == 0 {
        return Err(WorkloadError::ZeroElements);
    }
    if steps == 0 {
        return Err(WorkloadError::ZeroSteps);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let stride = layout.stride();
    Ok((0..steps)
        .map(|op| {
            let elem = rng.random_range(0..elem_count);
            let (offset, size) = fields[rng.random_range(0..fields.len())];
            MemoryAccess::read(op, base + elem * stride + offset, size)
        })
        .collect())
}
