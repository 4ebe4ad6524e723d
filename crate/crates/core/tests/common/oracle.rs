//! Reference models used only by tests. Nothing here calls into the
//! layout, cache or DRAM code it is used to check.

#![allow(dead_code)]

use std::collections::BTreeMap;

#[derive(Clone, Copy, Debug)]
pub struct Field {
    pub size: u64,
    pub align: u64,
    pub critical: bool,
}

/// Places fields one at a time, probing offsets byte by byte.
pub fn naive_layout(fields: &[Field]) -> (Vec<u64>, u64) {
    let mut offsets = Vec::new();
    let mut used = 0u64;
    for f in fields {
        let mut at = used;
        while !at.is_multiple_of(f.align) {
            at += 1;
        }
        offsets.push(at);
        used = at + f.size;
    }
    let max_align = fields.iter().map(|f| f.align).max().unwrap_or(1);
    let mut stride = used;
    while !stride.is_multiple_of(max_align) {
        stride += 1;
    }
    (offsets, stride)
}

/// Where each (element, member, byte) of a region ends up once `remapped`
/// members are moved out: kept members re-laid out at `orig_base`, the
/// moved ones carved from `array_base` either one array each or as one
/// shared array.
/// (element, member, byte) -> (original address, converted address)
pub type ByteEntry = ((u64, usize, u64), (u64, u64));

pub struct ByteMap {
    pub stride: u64,
    pub bytes: Vec<ByteEntry>,
}

pub fn byte_map(
    fields: &[Field],
    remapped: &[bool],
    orig_base: u64,
    elem_count: u64,
    array_base: u64,
    array_align: u64,
    shared: bool,
) -> ByteMap {
    let (orig_offsets, stride) = naive_layout(fields);
    let kept: Vec<usize> = (0..fields.len()).filter(|&m| !remapped[m]).collect();
    let moved: Vec<usize> = (0..fields.len()).filter(|&m| remapped[m]).collect();
    let mut groups: Vec<Vec<usize>> = vec![kept];
    if shared {
        if !moved.is_empty() {
            groups.push(moved);
        }
    } else {
        groups.extend(moved.into_iter().map(|m| vec![m]));
    }

    // member -> (group base, group stride, offset in group)
    let mut place = vec![(0u64, 0u64, 0u64); fields.len()];
    let mut cursor = array_base;
    for (g, members) in groups.iter().enumerate() {
        if members.is_empty() {
            continue;
        }
        let sub: Vec<Field> = members.iter().map(|&m| fields[m]).collect();
        let (offsets, gstride) = naive_layout(&sub);
        let base = if g == 0 {
            orig_base
        } else {
            let align = sub.iter().map(|f| f.align).max().unwrap().max(array_align);
            let mut b = cursor;
            while !b.is_multiple_of(align) {
                b += 1;
            }
            cursor = b + elem_count * gstride;
            b
        };
        for (&m, &off) in members.iter().zip(&offsets) {
            place[m] = (base, gstride, off);
        }
    }

    let mut bytes = Vec::new();
    for e in 0..elem_count {
        for (m, f) in fields.iter().enumerate() {
            let (base, gstride, off) = place[m];
            for b in 0..f.size {
                let orig = orig_base + e * stride + orig_offsets[m] + b;
                let conv = base + e * gstride + off + b;
                bytes.push(((e, m, b), (orig, conv)));
            }
        }
    }
    ByteMap { stride, bytes }
}

/// Per-row (critical, non-critical) byte counts of the converted layout.
pub fn row_bytes(map: &ByteMap, fields: &[Field], row_size: u64) -> BTreeMap<u64, (u64, u64)> {
    let mut rows = BTreeMap::new();
    for &((_, m, _), (_, conv)) in &map.bytes {
        let entry: &mut (u64, u64) = rows.entry(conv / row_size).or_default();
        if fields[m].critical {
            entry.0 += 1;
        } else {
            entry.1 += 1;
        }
    }
    rows
}

/// Fraction of non-critical bytes in rows holding no critical byte.
pub fn gap_fraction(rows: &BTreeMap<u64, (u64, u64)>) -> f64 {
    let total: u64 = rows.values().map(|r| r.1).sum();
    if total == 0 {
        return 1.0;
    }
    let clean: u64 = rows.values().filter(|r| r.0 == 0).map(|r| r.1).sum();
    clean as f64 / total as f64
}

/// Binomial mean and standard deviation.
pub fn binomial(n: u64, p: f64) -> (f64, f64) {
    let n = n as f64;
    (n * p, (n * p * (1.0 - p)).sqrt())
}
