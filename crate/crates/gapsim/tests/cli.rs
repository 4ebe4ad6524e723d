use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn gapsim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gapsim"))
        .args(args)
        .output()
        .expect("running gapsim")
}

fn text(bytes: &[u8]) -> String {
    String::from_utf8_lossy(bytes).into_owned()
}

fn config(name: &str) -> String {
    configs().join(name).display().to_string()
}

fn write_config(dir: &Path, body: &str) -> String {
    let path = dir.join("exp.toml");
    fs::write(&path, body).unwrap();
    path.display().to_string()
}

fn members(n: usize) -> String {
    (0..n)
        .map(|i| format!("{{ name = \"m{i}\", size = 4, critical = {} }}", i % 2 == 0))
        .collect::<Vec<_>>()
        .join(",\n    ")
}

fn random_config(n: usize) -> String {
    format!(
        "seed = 5\n\n[layout]\nmembers = [\n    {}\n]\n\n[region]\nbase = 0x100000\nelem_count = 4096\narray_base = 0x10000000\n\n[workload]\nkind = \"random\"\nsteps = 500\nmembers = [\"m0\"]\n",
        members(n)
    )
}

#[test]
fn explain_translate_shows_demo_addresses() {
    let out = gapsim(&[
        "simulate",
        "--config",
        &config("remap_demo.toml"),
        "--explain-translate",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    let err = text(&out.stderr);
    assert!(err.contains("op 0 R 0x40000+8 -> 0x40000+8"), "{err}");
    assert!(err.contains("op 1 W 0x40008+8 -> 0xffff0000+8"), "{err}");
    assert!(err.contains("op 2 R 0x40010+4 -> 0x40008+4"), "{err}");
    let csv = text(&out.stdout);
    assert!(csv.starts_with("plan_mask,remapped,"));
    assert!(csv.lines().nth(1).unwrap().starts_with("2,v,"));
}

#[test]
fn identity_plan_is_normalized_to_one() {
    let dir = tempfile::tempdir().unwrap();
    let body = fs::read_to_string(configs().join("remap_demo.toml"))
        .unwrap()
        .replace("remap = [\"v\"]", "remap = []")
        .replace(
            "\"remap_demo.trace\"",
            &format!("{:?}", configs().join("remap_demo.trace")),
        );
    let path = write_config(dir.path(), &body);
    let out = gapsim(&["simulate", "--config", &path]);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    assert!(text(&out.stdout)
        .lines()
        .nth(1)
        .unwrap()
        .ends_with(",1.000000"));
    assert!(text(&out.stderr).contains("plan identity (0)"));
}

#[test]
fn unknown_plan_member_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let body = fs::read_to_string(configs().join("remap_demo.toml"))
        .unwrap()
        .replace("remap = [\"v\"]", "remap = [\"v\", \"weight\"]");
    let path = write_config(dir.path(), &body);
    let out = gapsim(&["simulate", "--config", &path]);
    assert_eq!(out.status.code(), Some(1));
    let err = text(&out.stderr);
    assert!(
        err.contains("plan.remap[1]") && err.contains("`weight`"),
        "{err}"
    );
    assert!(out.stdout.is_empty());
}

#[test]
fn exit_codes() {
    assert_eq!(
        gapsim(&["simulate", "--config", "/nonexistent/x.toml"])
            .status
            .code(),
        Some(1)
    );
    assert_eq!(gapsim(&["simulate"]).status.code(), Some(1));
    assert_eq!(gapsim(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(
        gapsim(&[
            "sweep",
            "--config",
            &config("remap_demo.toml"),
            "--jobs",
            "0"
        ])
        .status
        .code(),
        Some(1)
    );
    assert_eq!(gapsim(&["--help"]).status.code(), Some(0));

    // A warmup longer than the trace is only discovered by the engine.
    let dir = tempfile::tempdir().unwrap();
    let body = fs::read_to_string(configs().join("remap_demo.toml"))
        .unwrap()
        .replace("seed = 1", "seed = 1\nwarmup_ops = 10")
        .replace(
            "\"remap_demo.trace\"",
            &format!("{:?}", configs().join("remap_demo.trace")),
        );
    let path = write_config(dir.path(), &body);
    let out = gapsim(&["simulate", "--config", &path]);
    assert_eq!(out.status.code(), Some(2), "{}", text(&out.stderr));
    assert!(text(&out.stderr).contains("warmup"));

    let out = gapsim(&[
        "rowmap",
        "--config",
        &config("remap_demo.toml"),
        "--out",
        "/nonexistent/dir/x.csv",
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn nine_member_sweep_has_257_rows() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_config(dir.path(), &random_config(9));
    let out_file = dir.path().join("sweep.csv");
    let out = gapsim(&[
        "sweep",
        "--config",
        &path,
        "--jobs",
        "4",
        "--out",
        out_file.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    assert!(out.stdout.is_empty());
    let csv = fs::read_to_string(&out_file).unwrap();
    let rows: Vec<&str> = csv
        .lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .collect();
    assert_eq!(rows.len(), 257);
    assert!(rows[256].starts_with("AVERAGE,"));
    let ranks: Vec<usize> = rows[..256]
        .iter()
        .map(|r| r.split(',').next().unwrap().parse().unwrap())
        .collect();
    assert_eq!(ranks, (1..=256).collect::<Vec<_>>());
}

#[test]
fn one_member_sweep_has_two_rows() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_config(dir.path(), &random_config(1));
    let out = gapsim(&["sweep", "--config", &path]);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    let csv = text(&out.stdout);
    let rows: Vec<&str> = csv
        .lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .collect();
    assert_eq!(rows.len(), 2);
    assert!(rows[0].starts_with("1,0,,"));
}

#[test]
fn twenty_one_member_sweep_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_config(dir.path(), &random_config(21));
    let out = gapsim(&["sweep", "--config", &path]);
    assert_eq!(out.status.code(), Some(1));
    let err = text(&out.stderr);
    assert!(
        err.contains("2^20") && err.contains("limited to 20"),
        "{err}"
    );
}

fn gap_line(stderr: &str) -> &str {
    stderr
        .lines()
        .find(|l| l.starts_with("gap_metric"))
        .unwrap()
}

#[test]
fn rowmap_gap_metric() {
    let aos = gapsim(&["rowmap", "--config", &config("aos_rowmap.toml")]);
    assert_eq!(aos.status.code(), Some(0));
    assert_eq!(gap_line(&text(&aos.stderr)), "gap_metric 0.000000");
    assert!(text(&aos.stdout)
        .lines()
        .skip(1)
        .all(|l| l.contains(",mixed,")));

    let soa = gapsim(&["rowmap", "--config", &config("soa_rowmap.toml")]);
    assert_eq!(soa.status.code(), Some(0));
    assert_eq!(gap_line(&text(&soa.stderr)), "gap_metric 1.000000");
    assert!(!text(&soa.stderr).contains("warning"));
    assert!(!text(&soa.stdout).contains(",mixed,"));
}

#[test]
fn all_critical_rowmap_warns() {
    let dir = tempfile::tempdir().unwrap();
    let body = fs::read_to_string(configs().join("aos_rowmap.toml"))
        .unwrap()
        .replace(", critical = false", "");
    let path = write_config(dir.path(), &body);
    let out = gapsim(&["rowmap", "--config", &path]);
    assert_eq!(out.status.code(), Some(0));
    let err = text(&out.stderr);
    assert_eq!(gap_line(&err), "gap_metric 1.000000");
    assert!(err.contains("warning") && err.contains("vacuous"), "{err}");
}

#[test]
fn gen_trace_is_deterministic_per_seed() {
    let chase = config("chase.toml");
    let a = gapsim(&["gen-trace", "--config", &chase, "--seed", "9"]);
    let b = gapsim(&["gen-trace", "--config", &chase, "--seed", "9"]);
    let c = gapsim(&["gen-trace", "--config", &chase, "--seed", "10"]);
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(a.stdout, b.stdout);
    assert_ne!(a.stdout, c.stdout);
    assert_eq!(text(&a.stdout).lines().count(), 40_000);

    // The written trace replays through a `kind = "trace"` config.
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("chase.trace"), &a.stdout).unwrap();
    let body = fs::read_to_string(configs().join("chase.toml"))
        .unwrap()
        .replace(
            "kind = \"pointer_chase\"\nsteps = 20000",
            "kind = \"trace\"\ntrace_file = \"chase.trace\"",
        );
    let replay = write_config(dir.path(), &body);
    let generated = gapsim(&["simulate", "--config", &chase, "--seed", "9"]);
    let replayed = gapsim(&["simulate", "--config", &replay, "--seed", "9"]);
    assert_eq!(
        replayed.status.code(),
        Some(0),
        "{}",
        text(&replayed.stderr)
    );
    assert_eq!(generated.stdout, replayed.stdout);
}

#[test]
fn output_path_from_config() {
    let dir = tempfile::tempdir().unwrap();
    let out_file = dir.path().join("rows.csv");
    let body = format!(
        "output = {:?}\n{}",
        out_file,
        fs::read_to_string(configs().join("aos_rowmap.toml")).unwrap()
    );
    let path = write_config(dir.path(), &body);
    let out = gapsim(&["rowmap", "--config", &path]);
    assert_eq!(out.status.code(), Some(0));
    assert!(out.stdout.is_empty());
    assert!(fs::read_to_string(&out_file)
        .unwrap()
        .starts_with("row,tag,critical_bytes,noncritical_bytes\n"));
}
