//! Sweeps spread over a rayon pool.

use gapsim_core::engine::{finish_sweep, run, EngineError, SimConfig, SweepResult};
use gapsim_core::layout::{enumerate_plans, RegionSpec, StructLayout};
use gapsim_core::MemoryAccess;
use rayon::prelude::*;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SweepError {
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error("cannot start worker pool: {0}")]
    Pool(#[from] rayon::ThreadPoolBuildError),
}

/// Same result as [`gapsim_core::engine::sweep`], computed by `jobs`
/// workers. Each plan is an independent run and the reports are collected
/// in enumeration order, so the output does not depend on `jobs`.
pub fn par_sweep(
    trace: &[MemoryAccess],
    layout: &StructLayout,
    region: &RegionSpec,
    cfg: &SimConfig,
    jobs: usize,
) -> Result<SweepResult, SweepError> {
    let plans = enumerate_plans(layout.len()).map_err(EngineError::from)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()?;
    let reports = pool.install(|| {
        plans
            .par_iter()
            .map(|plan| run(trace, layout, plan, region, cfg))
            .collect::<Result<Vec<_>, _>>()
    })?;
    Ok(finish_sweep(reports, cfg.mode)?)
}
