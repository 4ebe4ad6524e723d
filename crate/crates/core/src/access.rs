use core::fmt;

/// Direction of a memory access.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum AccessKind {
    Read,
    Write,
}

impl AccessKind {
    pub fn is_write(self) -> bool {
        matches!(self, AccessKind::Write)
    }

    /// Single-letter tag used by the trace format (`R` / `W`).
    pub fn letter(self) -> char {
        match self {
            AccessKind::Read => 'R',
            AccessKind::Write => 'W',
        }
    }
}

/// One load or store issued by the workload, identified by its position in
/// the trace.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct MemoryAccess {
    pub op_index: u64,
    pub kind: AccessKind,
    pub addr: u64,
    pub size: u32,
}

impl MemoryAccess {
    pub fn read(op_index: u64, addr: u64, size: u32) -> Self {
        Self {
            op_index,
            kind: AccessKind::Read,
            addr,
            size,
        }
    }

    pub fn write(op_index: u64, addr: u64, size: u32) -> Self {
        Self {
            op_index,
            kind: AccessKind::Write,
            addr,
            size,
        }
    }

    /// One past the last byte touched.
    pub fn end(&self) -> u64 {
        self.addr + u64::from(self.size)
    }
}

impl fmt::Display for MemoryAccess {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {} {:#x} {}",
            self.op_index,
            self.kind.letter(),
            self.addr,
            self.size
        )
    }
}
