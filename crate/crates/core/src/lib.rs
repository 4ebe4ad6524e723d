//! Trace-driven model of AoS to SoA layout conversion and row-granular
//! approximate DRAM.
//!
//! The crate is `no_std` (with `alloc`) so the models can be embedded in
//! other simulators; file formats, configuration and the command line live
//! in the `gapsim` crate.
//!
//! * [`layout`]: struct layouts, remap plans and the address remapper.
//! * [`cache`]: inclusive set-associative LRU hierarchy with a flat memory latency.
//! * [`dram`]: row geometry, criticality classification, row policies, bit-error injection.
//! * [`workload`]: deterministic scan / pointer-chase / random trace generators.
//! * [`engine`]: runs a trace under a plan, sweeps all plans, member affinity.
#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod access;
pub mod cache;
pub mod dram;
pub mod engine;
pub mod layout;
pub mod workload;

pub use access::{AccessKind, MemoryAccess};
