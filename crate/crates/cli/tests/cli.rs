use std::path::PathBuf;
use std::process::{Command, Output};

fn mspt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mspt"))
        .args(args)
        .output()
        .expect("run mspt")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn scratch(name: &str) -> PathBuf {
    let d = std::env::temp_dir().join(format!("mspt-cli-{name}-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&d);
    d
}

fn scenarios_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

#[test]
fn replay_figure_2_shows_discard_wave() {
    let o = mspt(&["replay-figure", "2"]);
    assert!(o.status.success());
    let out = stdout(&o);
    for line in [
        "state S2",
        "round=1 discard",
        "state S4",
        "round=3 discard",
        "S4: discard (round 3)",
    ] {
        assert!(out.contains(line), "missing {line:?} in\n{out}");
    }
}

#[test]
fn replay_figure_1b_verbatim_is_rejected() {
    let o = mspt(&["replay-figure", "1b", "--verbatim"]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("aborted: inconsistent dependency sets"));
}

#[test]
fn bench_writes_csv() {
    let dir = scratch("bench");
    let o = mspt(&["bench", "--max-k", "3", "--out-dir", dir.to_str().unwrap()]);
    assert!(o.status.success());
    let csv = std::fs::read_to_string(dir.join("bench.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(
        lines[0],
        "shards_per_tx,protocol,rounds,virtual_latency,messages"
    );
    assert_eq!(lines.len(), 7);
    assert!(lines[5].starts_with("3,ppac,2,"));
    assert!(lines[6].starts_with("3,2pc,1,"));
}

#[test]
fn run_writes_artifacts() {
    let dir = scratch("run");
    let o = mspt(&[
        "run",
        "coin-exchange",
        "--seed",
        "4",
        "--replication",
        "2",
        "--out-dir",
        dir.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stdout(&o));
    for f in ["trace.txt", "metrics.csv", "sessions.csv", "audit.txt"] {
        assert!(dir.join(f).exists(), "{f}");
    }
    let audit = std::fs::read_to_string(dir.join("audit.txt")).unwrap();
    assert!(audit.contains("findings: 0"));
}

#[test]
fn runs_are_reproducible() {
    let a = scratch("det-a");
    let b = scratch("det-b");
    for d in [&a, &b] {
        assert!(mspt(&[
            "run",
            "figure1a",
            "--seed",
            "9",
            "--out-dir",
            d.to_str().unwrap()
        ])
        .status
        .success());
    }
    assert_eq!(
        std::fs::read(a.join("trace.txt")).unwrap(),
        std::fs::read(b.join("trace.txt")).unwrap()
    );
}

#[test]
fn parse_error_reports_line_and_column() {
    let dir = scratch("bad");
    std::fs::create_dir_all(&dir).unwrap();
    let f = dir.join("bad.toml");
    std::fs::write(&f, "[network]\nseed = 1\ndelta = \"x\"\n").unwrap();
    let o = mspt(&["run", f.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("bad.toml:3:9"));
}

#[test]
fn two_phase_commit_audit_fails() {
    let o = mspt(&["audit", "chain4", "--protocol", "2pc"]);
    assert!(!o.status.success());
    assert!(stdout(&o).contains("shard-id"));
    assert!(mspt(&["audit", "chain4"]).status.success());
}

#[test]
fn check_bounds_without_early_exit() {
    let o = mspt(&["check-bounds", "figure2", "--optimize", "false"]);
    assert!(o.status.success(), "{}", stdout(&o));
}

#[test]
fn shipped_scenarios_pass() {
    let mut n = 0;
    for entry in std::fs::read_dir(scenarios_dir()).unwrap() {
        let p = entry.unwrap().path();
        if p.extension().is_some_and(|e| e == "toml") {
            let o = mspt(&["run", p.to_str().unwrap()]);
            assert!(o.status.success(), "{}: {}", p.display(), stdout(&o));
            n += 1;
        }
    }
    assert!(n >= 7);
}

#[test]
fn unknown_scenario_is_an_error() {
    let o = mspt(&["run", "no-such-thing"]);
    assert_eq!(o.status.code(), Some(2));
}
