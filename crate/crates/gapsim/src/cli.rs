//! The `gapsim` command line.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use gapsim_core::dram::{classify_rows, gap_metric, RowTag};
use gapsim_core::engine::{affinity, normalize, run};
use gapsim_core::layout::{build_region_map, RemapPlan, MAX_ENUMERATED_MEMBERS};

use crate::config::{ConfigError, Experiment};
use crate::parallel::par_sweep;
use crate::report::{plan_name, rowmap_csv, simulate_csv, summarize, sweep_csv, write_atomic};
use crate::trace_io::format_trace;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "gapsim",
    version,
    about = "Trace-driven simulator for structure layout remapping and approximate DRAM rows"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the configured plan and compare it with the unmodified layout.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Print how the first N trace ops are translated (default 16).
        #[arg(long, value_name = "N", num_args = 0..=1, default_missing_value = "16")]
        explain_translate: Option<usize>,
    },
    /// Run every canonical remapping plan and rank them.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Number of concurrent sweep workers.
        #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u16).range(1..))]
        jobs: u16,
    },
    /// Classify the DRAM rows covered by the region under the configured plan.
    Rowmap {
        #[command(flatten)]
        common: Common,
    },
    /// Write the configured workload as a trace file.
    GenTrace {
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Debug, Args)]
pub struct Common {
    #[arg(long, value_name = "PATH")]
    pub config: PathBuf,
    /// Output file; defaults to the config's `output`, then stdout.
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
    /// Overrides the config's seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

enum Failure {
    Config(ConfigError),
    Runtime(anyhow::Error),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e)
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

type Result<T> = std::result::Result<T, Failure>;

/// Runs the CLI and returns the process exit code.
pub fn main_with<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if e.use_stderr() {
                stderr.write_all(text.as_bytes())
            } else {
                stdout.write_all(text.as_bytes())
            };
            return code;
        }
    };
    match dispatch(cli.command, stdout, stderr) {
        Ok(()) => EXIT_OK,
        Err(Failure::Config(e)) => {
            let _ = writeln!(stderr, "config error: {e}");
            EXIT_CONFIG
        }
        Err(Failure::Runtime(e)) => {
            let _ = writeln!(stderr, "error: {e:#}");
            EXIT_RUNTIME
        }
    }
}

fn load(common: &Common) -> Result<Experiment> {
    let mut exp = Experiment::load(&common.config)?;
    if let Some(seed) = common.seed {
        exp.set_seed(seed);
    }
    Ok(exp)
}

fn emit(common: &Common, exp: &Experiment, bytes: &[u8], stdout: &mut dyn Write) -> Result<()> {
    match common.out.as_ref().or(exp.output.as_ref()) {
        Some(path) => write_file(path, bytes),
        None => stdout
            .write_all(bytes)
            .context("writing to stdout")
            .map_err(Failure::from),
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    write_atomic(path, bytes)
        .with_context(|| format!("writing {}", path.display()))
        .map_err(Failure::from)
}

fn dispatch(command: Command, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<()> {
    match command {
        Command::Simulate {
            common,
            explain_translate,
        } => simulate(&common, explain_translate, stdout, stderr),
        Command::Sweep { common, jobs } => sweep(&common, usize::from(jobs), stdout, stderr),
        Command::Rowmap { common } => rowmap(&common, stdout, stderr),
        Command::GenTrace { common } => {
            let exp = load(&common)?;
            let trace = exp.trace()?;
            emit(&common, &exp, format_trace(&trace).as_bytes(), stdout)
        }
    }
}

fn simulate(
    common: &Common,
    explain: Option<usize>,
    stdout: &mut dyn Write,
    stderr: &mut dyn Write,
) -> Result<()> {
    let exp = load(common)?;
    let trace = exp.trace()?;

    if let Some(limit) = explain {
        let rm =
            build_region_map(&exp.layout, &exp.plan, &exp.region).context("building region map")?;
        writeln!(stderr, "{rm}").ok();
        for access in trace.iter().take(limit) {
            let pieces = rm.translate(access).context("translating")?;
            let to: Vec<String> = pieces
                .iter()
                .map(|p| format!("{:#x}+{}", p.addr, p.size))
                .collect();
            writeln!(
                stderr,
                "op {} {} {:#x}+{} -> {}",
                access.op_index,
                access.kind.letter(),
                access.addr,
                access.size,
                to.join(" ")
            )
            .ok();
        }
    }

    let mut report =
        run(&trace, &exp.layout, &exp.plan, &exp.region, &exp.sim).context("simulating plan")?;
    if !exp.plan.is_identity() {
        let identity = RemapPlan::identity(exp.layout.len());
        let baseline = run(&trace, &exp.layout, &identity, &exp.region, &exp.sim)
            .context("simulating baseline")?;
        report.normalized_ops = normalize(&report, &baseline, exp.sim.mode);
    }

    write!(stderr, "{}", summarize(&report, &exp.layout)).ok();
    if let Some(window) = exp.affinity_window {
        let aff =
            affinity(&trace, &exp.layout, &exp.region, window).context("computing affinity")?;
        writeln!(stderr, "affinity (window {window} ops):").ok();
        for (a, row) in aff.matrix.iter().enumerate() {
            let cells: Vec<String> = row.iter().map(u64::to_string).collect();
            writeln!(
                stderr,
                "  {:>12} {}",
                exp.layout.member(a).name,
                cells.join(" ")
            )
            .ok();
        }
    }
    emit(common, &exp, &simulate_csv(&report), stdout)
}

fn sweep(
    common: &Common,
    jobs: usize,
    stdout: &mut dyn Write,
    stderr: &mut dyn Write,
) -> Result<()> {
    let exp = load(common)?;
    let n = exp.layout.len();
    if n > MAX_ENUMERATED_MEMBERS {
        return Err(ConfigError::new(
            "layout.members",
            format!(
                "{n} members give 2^{} canonical plans; sweeps are limited to {MAX_ENUMERATED_MEMBERS} members",
                n - 1
            ),
        )
        .into());
    }
    let trace = exp.trace()?;
    let result =
        par_sweep(&trace, &exp.layout, &exp.region, &exp.sim, jobs).context("sweeping plans")?;
    let best = result.reports.last().expect("sweep has the identity plan");
    writeln!(
        stderr,
        "{} plans; worst {:.6} ({}), best {:.6} ({}), average {:.6}",
        result.reports.len(),
        result.reports[0].normalized_ops,
        plan_name(&result.reports[0].plan, &exp.layout),
        best.normalized_ops,
        plan_name(&best.plan, &exp.layout),
        result.average.normalized_ops
    )
    .ok();
    emit(common, &exp, &sweep_csv(&result), stdout)
}

fn rowmap(common: &Common, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<()> {
    let exp = load(common)?;
    let rm =
        build_region_map(&exp.layout, &exp.plan, &exp.region).context("building region map")?;
    let cls = classify_rows(&rm, &exp.sim.dram.geometry);
    let counts: Vec<String> = [RowTag::CriticalOnly, RowTag::NonCriticalOnly, RowTag::Mixed]
        .iter()
        .map(|&t| format!("{t} {}", cls.count(t)))
        .collect();
    writeln!(
        stderr,
        "row size {} bytes; {} rows: {}",
        cls.row_size(),
        cls.len(),
        counts.join(", ")
    )
    .ok();
    writeln!(stderr, "gap_metric {:.6}", gap_metric(&cls)).ok();
    if cls.total().noncritical == 0 {
        writeln!(
            stderr,
            "warning: layout has no non-critical bytes; gap_metric 1.0 is vacuous"
        )
        .ok();
    }
    emit(common, &exp, &rowmap_csv(&cls), stdout)
}
