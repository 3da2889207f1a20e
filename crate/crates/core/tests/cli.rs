use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn cormen(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cormen")).args(args).output().unwrap()
}

fn shipped(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios").join(name)
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

#[test]
fn validate_accepts_every_shipped_scenario() {
    for entry in std::fs::read_dir(shipped("")).unwrap() {
        let path = entry.unwrap().path();
        let out = cormen(&["validate", path.to_str().unwrap()]);
        assert!(out.status.success(), "{}: {}", path.display(), String::from_utf8_lossy(&out.stderr));
    }
}

#[test]
fn config_errors_exit_1_with_line_numbers() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write(dir.path(), "bad.scn", "[protocol]\nprotocol = cromen\n");
    let out = cormen(&["validate", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 2") && err.contains("cormen, cope, plain"), "{err}");

    let empty = write(dir.path(), "empty.scn", "");
    assert_eq!(cormen(&["run", empty.to_str().unwrap()]).status.code(), Some(1));
    assert_eq!(cormen(&["run", "/nonexistent.scn"]).status.code(), Some(1));
}

#[test]
fn run_writes_csv_and_trace() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("out.csv");
    let trace = dir.path().join("t.log");
    let out = cormen(&[
        "run",
        shipped("fig1_chain.scn").to_str().unwrap(),
        "--protocol",
        "plain",
        "--seed",
        "3",
        "--trace",
        trace.to_str().unwrap(),
        "--out",
        csv.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let text = std::fs::read_to_string(&csv).unwrap();
    assert!(text.starts_with("scenario,protocol,seed,t_s,flows_active,pdr,"));
    assert!(text.lines().nth(1).unwrap().starts_with("fig1_chain,plain,3,"));
    let trace = std::fs::read_to_string(&trace).unwrap();
    assert_eq!(trace.lines().filter(|l| l.contains(" tx DATA")).count(), 4);
}

#[test]
fn trace_on_lands_next_to_csv() {
    let dir = tempfile::tempdir().unwrap();
    let scn = write(
        dir.path(),
        "chain.scn",
        "[topology]\ncols = 3\n[flows]\nflow 0 2 start 0.1 stop 0.5\n[sim]\nduration = 1\ntrace = on\n",
    );
    let csv = dir.path().join("chain.csv");
    let out = cormen(&["run", scn.to_str().unwrap(), "--out", csv.to_str().unwrap()]);
    assert!(out.status.success());
    assert!(std::fs::read_to_string(dir.path().join("chain.trace")).unwrap().contains(" deliver "));
}

#[test]
fn batch_rejects_bad_arguments() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(cormen(&["batch", dir.path().to_str().unwrap()]).status.code(), Some(1));
    let out = cormen(&["batch", dir.path().to_str().unwrap(), "--protocols", "exor"]);
    assert!(!out.status.success());
    let out = cormen(&["batch", dir.path().to_str().unwrap(), "--seeds", "5..1"]);
    assert!(!out.status.success());
}

#[test]
fn batch_rows_match_schedule() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::copy(shipped("grid3x3.scn"), dir.path().join("grid3x3.scn")).unwrap();
    let csv = dir.path().join("out.csv");
    let out = cormen(&["batch", dir.path().to_str().unwrap(), "--protocols", "cope,plain", "--seeds", "1,2", "--out", csv.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(&csv).unwrap();
    // 7 flow-start epochs plus the closing row
    assert_eq!(text.lines().count(), 1 + 2 * 2 * 8);
}
