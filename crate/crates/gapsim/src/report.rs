//! CSV output for runs, sweeps and row maps.

use std::io::{self, Write};
use std::path::Path;

use gapsim_core::dram::RowClassification;
use gapsim_core::engine::{SimReport, SweepResult};
use gapsim_core::layout::{RemapPlan, StructLayout};

/// Writes `bytes` to a temporary file next to `path` and renames it into
/// place, so readers never see a half-written file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

fn level_headers(levels: usize) -> impl Iterator<Item = String> {
    (1..=levels).map(|l| format!("l{l}_misses"))
}

fn remapped_names(report: &SimReport) -> String {
    report.remapped.join(";")
}

fn csv_bytes(
    rows: impl FnOnce(&mut csv::Writer<&mut Vec<u8>>) -> csv::Result<()>,
    prefix: &str,
) -> Vec<u8> {
    let mut out = prefix.as_bytes().to_vec();
    {
        let mut w = csv::Writer::from_writer(&mut out);
        rows(&mut w).expect("writing CSV to memory");
        w.flush().expect("writing CSV to memory");
    }
    out
}

/// One row describing a single run.
pub fn simulate_csv(report: &SimReport) -> Vec<u8> {
    csv_bytes(
        |w| {
            let mut header: Vec<String> = [
                "plan_mask",
                "remapped",
                "total_cycles",
                "ops_completed",
                "trace_ops",
                "translated_accesses",
            ]
            .map(String::from)
            .to_vec();
            header.extend(level_headers(report.levels.len()));
            header.extend(
                [
                    "mem_reads",
                    "mem_writebacks",
                    "approximate_rows",
                    "flips",
                    "normalized_ops",
                ]
                .map(String::from),
            );
            w.write_record(&header)?;

            let mut row = vec![
                report.plan_mask().to_string(),
                remapped_names(report),
                report.total_cycles.to_string(),
                report.ops_completed.to_string(),
                report.trace_ops.to_string(),
                report.translated_accesses.to_string(),
            ];
            row.extend(report.levels.iter().map(|l| l.misses.to_string()));
            row.extend([
                report.memory_reads.to_string(),
                report.memory_writebacks.to_string(),
                report.approximate_rows.to_string(),
                report.flip_count().to_string(),
                format!("{:.6}", report.normalized_ops),
            ]);
            w.write_record(&row)
        },
        "",
    )
}

/// Ranked sweep table (largest slowdown first) followed by an `AVERAGE` row.
pub fn sweep_csv(result: &SweepResult) -> Vec<u8> {
    let levels = result.average.level_misses.len();
    csv_bytes(
        |w| {
            let mut header: Vec<String> = [
                "rank",
                "plan_mask",
                "remapped",
                "total_cycles",
                "ops_completed",
            ]
            .map(String::from)
            .to_vec();
            header.extend(level_headers(levels));
            header.extend(["mem_reads", "flips", "normalized_ops"].map(String::from));
            w.write_record(&header)?;

            for (i, r) in result.reports.iter().enumerate() {
                let mut row = vec![
                    (i + 1).to_string(),
                    r.plan_mask().to_string(),
                    remapped_names(r),
                    r.total_cycles.to_string(),
                    r.ops_completed.to_string(),
                ];
                row.extend(r.levels.iter().map(|l| l.misses.to_string()));
                row.extend([
                    r.memory_reads.to_string(),
                    r.flip_count().to_string(),
                    format!("{:.6}", r.normalized_ops),
                ]);
                w.write_record(&row)?;
            }

            let a = &result.average;
            let mut row = vec![
                "AVERAGE".to_string(),
                String::new(),
                String::new(),
                format!("{:.3}", a.total_cycles),
                format!("{:.3}", a.ops_completed),
            ];
            row.extend(a.level_misses.iter().map(|m| format!("{m:.3}")));
            row.extend([
                format!("{:.3}", a.memory_reads),
                format!("{:.3}", a.flips),
                format!("{:.6}", a.normalized_ops),
            ]);
            w.write_record(&row)
        },
        "# normalized_ops counts logical trace ops, before translation splits them\n",
    )
}

/// One line per DRAM row the region touches.
pub fn rowmap_csv(cls: &RowClassification) -> Vec<u8> {
    csv_bytes(
        |w| {
            w.write_record(["row", "tag", "critical_bytes", "noncritical_bytes"])?;
            for (row, bytes, tag) in cls.iter() {
                w.write_record([
                    row.to_string(),
                    tag.to_string(),
                    bytes.critical.to_string(),
                    bytes.noncritical.to_string(),
                ])?;
            }
            Ok(())
        },
        "",
    )
}

/// Comma-separated remapped members, or `identity`.
pub fn plan_name(plan: &RemapPlan, layout: &StructLayout) -> String {
    if plan.is_identity() {
        "identity".to_string()
    } else {
        plan.label(layout, ",")
    }
}

/// Human-readable summary of a run, for stderr.
pub fn summarize(report: &SimReport, layout: &StructLayout) -> String {
    let mut s = format!(
        "plan {} ({})\n  cycles {}  ops {}/{}  normalized {:.6}\n",
        plan_name(&report.plan, layout),
        report.plan_mask(),
        report.total_cycles,
        report.ops_completed,
        report.trace_ops,
        report.normalized_ops,
    );
    for (i, l) in report.levels.iter().enumerate() {
        s.push_str(&format!(
            "  L{}  hits {}  misses {}  writebacks {}\n",
            i + 1,
            l.hits,
            l.misses,
            l.writebacks
        ));
    }
    s.push_str(&format!(
        "  memory reads {}  writebacks {}\n  approximate rows {}  bit flips {}\n",
        report.memory_reads,
        report.memory_writebacks,
        report.approximate_rows,
        report.flip_count()
    ));
    s
}
