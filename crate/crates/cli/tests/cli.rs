use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn hitl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hitl"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// A run small enough to finish in a couple of seconds.
fn tiny_config(dir: &Path) -> PathBuf {
    let cfg = serde_json::json!({
        "seed": 4,
        "demos": 3,
        "rounds": 2,
        "quota": 300,
        "train": {"epochs": 2, "steps_per_epoch": 20, "eval_interval_epochs": 1, "eval_episodes": 3},
        "policy": {"hidden": [8]}
    });
    let p = dir.join("tiny.json");
    fs::write(&p, cfg.to_string()).unwrap();
    p
}

fn csv_rows(p: &Path) -> usize {
    fs::read_to_string(p).unwrap().lines().count() - 1
}

#[test]
fn demo_gen_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = hitl(&["demo-gen", "--out", path(out), "--count", "4", "--seed", "9"]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(a.join("manifest.json")).unwrap()).unwrap();
    let files = manifest["files"].as_array().unwrap();
    assert_eq!(files.len(), 4);
    for f in files {
        let f = f.as_str().unwrap();
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap());
    }
}

#[test]
fn zero_demos_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = hitl(&["demo-gen", "--out", path(dir.path()), "--count", "0"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn invalid_run_config_exits_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    for (name, text) in [
        ("bad.json", r#"{"demos": 0}"#),
        ("typo.json", r#"{"demoz": 3}"#),
        ("broken.json", "{"),
    ] {
        let p = dir.path().join(name);
        fs::write(&p, text).unwrap();
        let o = hitl(&["run", "--config", path(&p), "--out", path(&out)]);
        assert_eq!(
            o.status.code(),
            Some(2),
            "{name}: {}",
            String::from_utf8_lossy(&o.stderr)
        );
    }
    let o = hitl(&[
        "run",
        "--config",
        path(&dir.path().join("missing.json")),
        "--out",
        path(&out),
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn sequential_and_parallel_runs_write_identical_directories() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let (par, seq) = (dir.path().join("par"), dir.path().join("seq"));
    let o = hitl(&["run", "--config", path(&cfg), "--out", path(&par)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let o = hitl(&["run", "--config", path(&cfg), "--out", path(&seq), "--sequential"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));

    let rounds: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(par.join("rounds.json")).unwrap()).unwrap();
    assert_eq!(rounds.as_array().unwrap().len(), 3);
    assert!(par.join("config.json").exists());
    assert_eq!(
        fs::read(par.join("rounds.json")).unwrap(),
        fs::read(seq.join("rounds.json")).unwrap()
    );
    for i in 1..=3 {
        let ckpt = format!("checkpoints/policy_{i}.bin");
        assert_eq!(
            fs::read(par.join(&ckpt)).unwrap(),
            fs::read(seq.join(&ckpt)).unwrap(),
            "{ckpt}"
        );
    }

    let report = dir.path().join("report");
    let o = hitl(&["report", "--runs", path(&par), path(&seq), "--out", path(&report)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(csv_rows(&report.join("report.csv")), 3);
}

#[test]
fn ablation_writes_one_row_per_setting() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let out = dir.path().join("abl");
    let o = hitl(&[
        "ablate",
        "--config",
        path(&cfg),
        "--sweep",
        "remove-class",
        "--out",
        path(&out),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(csv_rows(&out.join("ablation.csv")), 4);

    let o = hitl(&[
        "ablate",
        "--config",
        path(&cfg),
        "--sweep",
        "intv-ratio",
        "--grid",
        "0.2,0.5,0.99",
        "--out",
        path(&out),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(out.join("ablation.csv")).unwrap();
    assert_eq!(text.lines().count() - 1, 3);
    assert!(text.contains("infeasible"), "{text}");
}

#[test]
fn memory_bench_covers_strategies_times_caps() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let out = dir.path().join("mem");
    let o = hitl(&[
        "bench-memory",
        "--config",
        path(&cfg),
        "--strategies",
        "lfi,fifo",
        "--caps",
        "0.5,1.0",
        "--out",
        path(&out),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    // Base row plus strategies x caps.
    assert_eq!(csv_rows(&out.join("memory.csv")), 1 + 2 * 2);
    let o = hitl(&["bench-memory", "--strategies", "lru", "--out", path(&out)]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn serve_fails_on_a_busy_port_and_without_an_operator() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let busy = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let port = busy.local_addr().unwrap().port().to_string();
    let out = dir.path().join("live");
    let o = hitl(&["serve", "--config", path(&cfg), "--port", &port, "--out", path(&out)]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("cannot bind"));

    drop(busy);
    let o = hitl(&[
        "serve",
        "--config",
        path(&cfg),
        "--port",
        "0",
        "--wait",
        "1",
        "--out",
        path(&out),
    ]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("no operator"));
}
