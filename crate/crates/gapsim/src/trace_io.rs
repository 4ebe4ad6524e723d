//! Plain-text trace files: one access per line,
//! `<op_index> <R|W> <hex addr> <size>`, `#` starts a comment.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use gapsim_core::{AccessKind, MemoryAccess};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn malformed(line: usize, message: impl Into<String>) -> TraceError {
    TraceError::Malformed {
        line,
        message: message.into(),
    }
}

pub fn format_trace(trace: &[MemoryAccess]) -> String {
    let mut out = String::with_capacity(trace.len() * 24);
    for access in trace {
        writeln!(out, "{access}").expect("writing to a String");
    }
    out
}

fn parse_line(lineno: usize, line: &str) -> Result<MemoryAccess, TraceError> {
    let fields: Vec<&str> = line.split_whitespace().collect();
    let [op, kind, addr, size] = fields[..] else {
        return Err(malformed(
            lineno,
            format!("expected 4 fields, found {}", fields.len()),
        ));
    };
    let op_index = op
        .parse()
        .map_err(|_| malformed(lineno, format!("bad op index `{op}`")))?;
    let kind = match kind {
        "R" => AccessKind::Read,
        "W" => AccessKind::Write,
        other => {
            return Err(malformed(
                lineno,
                format!("bad access kind `{other}` (expected R or W)"),
            ))
        }
    };
    let hex = addr
        .strip_prefix("0x")
        .or_else(|| addr.strip_prefix("0X"))
        .ok_or_else(|| {
            malformed(
                lineno,
                format!("address `{addr}` must be hex with a 0x prefix"),
            )
        })?;
    let addr = u64::from_str_radix(hex, 16)
        .map_err(|_| malformed(lineno, format!("bad address `{addr}`")))?;
    let size: u32 = size
        .parse()
        .map_err(|_| malformed(lineno, format!("bad size `{size}`")))?;
    if size == 0 {
        return Err(malformed(lineno, "size must be at least 1"));
    }
    if addr.checked_add(u64::from(size)).is_none() {
        return Err(malformed(
            lineno,
            "access runs past the end of the address space",
        ));
    }
    Ok(MemoryAccess {
        op_index,
        kind,
        addr,
        size,
    })
}

/// Parses a trace; op indices must be strictly increasing.
pub fn parse_trace(text: &str) -> Result<Vec<MemoryAccess>, TraceError> {
    let mut trace: Vec<MemoryAccess> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let lineno = i + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let access = parse_line(lineno, line)?;
        if let Some(prev) = trace.last() {
            if access.op_index <= prev.op_index {
                return Err(malformed(
                    lineno,
                    format!(
                        "op index {} does not increase (previous {})",
                        access.op_index, prev.op_index
                    ),
                ));
            }
        }
        trace.push(access);
    }
    Ok(trace)
}

pub fn read_trace(path: &Path) -> Result<Vec<MemoryAccess>, TraceError> {
    let text = fs::read_to_string(path).map_err(|source| TraceError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_trace(&text)
}

pub fn write_trace(path: &Path, trace: &[MemoryAccess]) -> Result<(), TraceError> {
    crate::report::write_atomic(path, format_trace(trace).as_bytes()).map_err(|source| {
        TraceError::Io {
            path: path.display().to_string(),
            source,
        }
    })
}
