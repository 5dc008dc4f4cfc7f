use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use healsim_core::overlay::{detect_hubs, DirectedGraph, DEFAULT_HUB_FRACTION};

const MATRIX: &str = r#"
[defaults]
n_nodes = 10
cycles = 3
dataset = { source = "synthetic", samples = 400, features = 4, classes = 2 }
elevator = { bootstrap_degree = 4 }

[[experiment]]
name = "fa"
protocol = "fedavg"

[[experiment]]
name = "heal"
protocol = "heal"
repetitions = 2
faults = [{ kind = "crash_all_hubs", cycle = 1 }]
"#;

fn healsim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_healsim"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, text: &str) -> String {
    let p = dir.join("exp.toml");
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn run_writes_three_files_per_entry() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), MATRIX);
    let out = dir.path().join("out");
    let o = healsim(&["run", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    for name in ["fa", "heal"] {
        for suffix in ["metrics.csv", "manifest.json", "mean.csv"] {
            assert!(out.join(format!("{name}.{suffix}")).exists(), "{name}.{suffix}");
        }
    }
    let mean = fs::read_to_string(out.join("fa.mean.csv")).unwrap();
    assert_eq!(mean.lines().count(), 4);
    assert!(!mean.contains('\r'));
    let metrics = fs::read_to_string(out.join("heal.metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 1 + 2 * 3);
    assert!(metrics.starts_with("cycle,repetition,accuracy,live_nodes,hub_count,msgs_sent,msgs_dropped,diameter\n"));
}

#[test]
fn seeded_runs_are_byte_identical_across_job_counts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), MATRIX);
    let mut csvs = Vec::new();
    for (i, jobs) in ["1", "1", "3"].iter().enumerate() {
        let out = dir.path().join(format!("out{i}"));
        let o = healsim(&["run", "--config", &cfg, "--out", out.to_str().unwrap(), "--seed", "42", "--jobs", jobs]);
        assert!(o.status.success(), "{}", stderr(&o));
        csvs.push(fs::read(out.join("heal.metrics.csv")).unwrap());
    }
    assert_eq!(csvs[0], csvs[1]);
    assert_eq!(csvs[0], csvs[2]);
}

#[test]
fn manifest_reproduces_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), MATRIX);
    let a = dir.path().join("a");
    assert!(healsim(&["run", "--config", &cfg, "--out", a.to_str().unwrap(), "--seed", "5"]).status.success());
    let manifest = a.join("heal.manifest.json");
    let b = dir.path().join("b");
    let o = healsim(&["run", "--config", manifest.to_str().unwrap(), "--out", b.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(fs::read(a.join("heal.metrics.csv")).unwrap(), fs::read(b.join("heal.metrics.csv")).unwrap());
}

#[test]
fn collisions_need_force() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), MATRIX);
    let out = dir.path().join("out");
    let out = out.to_str().unwrap();
    assert!(healsim(&["run", "--config", &cfg, "--out", out]).status.success());
    let o = healsim(&["run", "--config", &cfg, "--out", out]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("--force"));
    assert!(healsim(&["run", "--config", &cfg, "--out", out, "--force"]).status.success());
}

#[test]
fn invalid_entry_fails_before_any_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &MATRIX.replace("repetitions = 2", "repetitions = 2\ns = 7"));
    let out = dir.path().join("out");
    let o = healsim(&["run", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(!o.status.success());
    let err = stderr(&o);
    assert!(err.contains("`heal`") && err.contains("`s`"), "{err}");
    assert!(!out.join("fa.metrics.csv").exists());
}

#[test]
fn sweep_skips_invalid_values() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), MATRIX);
    let out = dir.path().join("out");
    let o = healsim(&[
        "sweep", "--config", &cfg, "--out", out.to_str().unwrap(), "--name", "heal", "--param", "s", "--values", "1,2,9",
    ]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("s=9"));
    let csv = fs::read_to_string(out.join("heal.sweep_s.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    // Two valid values, each with 2 repetitions and a mean series of 3 cycles.
    assert_eq!(rows.len(), 2 * (2 * 3 + 3));
    assert!(rows.iter().all(|r| r.starts_with("s,1,") || r.starts_with("s,2,")));
    assert!(csv.starts_with("param,value,cycle,repetition,"));

    let out2 = dir.path().join("out2");
    let o = healsim(&["sweep", "--config", &cfg, "--out", out2.to_str().unwrap(), "--name", "heal", "--param", "h", "--values", "1,5,25"]);
    assert!(!o.status.success(), "h=25 >= n_nodes must be rejected");
}

#[test]
fn inspect_overlay_dumps_consistent_hub_sets() {
    let dir = tempfile::tempdir().unwrap();
    let doc = r#"
[[experiment]]
name = "elev"
protocol = "heal"
cycles = 1
dataset = { source = "synthetic", samples = 400, features = 4, classes = 2 }
"#;
    let cfg = write_config(dir.path(), doc);
    let out = dir.path().join("out");
    let o = healsim(&["inspect-overlay", "--config", &cfg, "--out", out.to_str().unwrap(), "--cycles", "10"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("elev.overlay.json")).unwrap()).unwrap();
    let snaps = summary.as_array().unwrap();
    assert_eq!(snaps.len(), 10);
    let mut first_full = None;
    for (i, snap) in snaps.iter().enumerate() {
        let text = fs::read_to_string(out.join(format!("elev.overlay/cycle_{i:04}.edges"))).unwrap();
        let g = DirectedGraph::from_edge_list(&text).unwrap();
        let hubs: Vec<u64> = detect_hubs(&g, DEFAULT_HUB_FRACTION).iter().map(|n| n.0).collect();
        let listed: Vec<u64> = snap["hubs"].as_array().unwrap().iter().map(|v| v.as_u64().unwrap()).collect();
        assert_eq!(hubs, listed, "cycle {i}");
        if hubs.len() == 5 && first_full.is_none() {
            first_full = Some(i);
        }
    }
    assert!(first_full.is_some_and(|i| i < 6), "hubs formed at {first_full:?}");
}

#[test]
fn inspect_overlay_rejects_static_topologies() {
    let dir = tempfile::tempdir().unwrap();
    let doc = r#"
[[experiment]]
name = "ring"
protocol = "epidemic"
topology = { kind = "ring" }
n_nodes = 10
cycles = 1
dataset = { source = "synthetic", samples = 400, features = 4, classes = 2 }
"#;
    let cfg = write_config(dir.path(), doc);
    let out = dir.path().join("out");
    let o = healsim(&["inspect-overlay", "--config", &cfg, "--out", out.to_str().unwrap(), "--cycles", "3"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("dynamic"));
}
