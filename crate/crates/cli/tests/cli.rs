use std::path::Path;
use std::process::{Command, Output};

fn seqprop(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_seqprop")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn design(dir: &Path, name: &str, args: &[&str]) -> String {
    let path = dir.join(name).to_str().unwrap().to_string();
    let mut full = vec!["design"];
    full.extend_from_slice(args);
    full.extend_from_slice(&["-o", &path]);
    let o = seqprop(&full);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    path
}

#[test]
fn design_prints_schedule() {
    let o = seqprop(&["design", "--eps", "0.05", "--delta", "0.05", "--zeta", "2.6759", "-s", "7"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("sizes: 59 116 173 231 288 345 403"));
}

#[test]
fn usage_errors_exit_3() {
    assert_eq!(seqprop(&["design", "--eps", "0.05", "--delta", "0.05"]).status.code(), Some(3));
    assert_eq!(seqprop(&["design", "--eps", "abc", "--delta", "0.05", "--zeta", "1"]).status.code(), Some(3));
    assert_eq!(seqprop(&["nonsense"]).status.code(), Some(3));
    assert_eq!(seqprop(&["--help"]).status.code(), Some(0));
}

#[test]
fn plan_file_round_trip_and_verify_stamp() {
    let dir = tempfile::tempdir().unwrap();
    let path = design(dir.path(), "p.json", &["--eps", "0.1", "--delta", "0.05", "--zeta", "2.6583", "-s", "3"]);
    let before = std::fs::read_to_string(&path).unwrap();
    assert!(before.contains("\"schema_version\": 1"));
    let o = seqprop(&["verify", &path]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("verdict: guaranteed"));
    let after = std::fs::read_to_string(&path).unwrap();
    assert!(after.contains("\"verdict\": \"guaranteed\""));
}

#[test]
fn violated_plan_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let path = design(dir.path(), "bad.json", &["--eps", "0.1", "--delta", "0.05", "--zeta", "4", "--fully-sequential"]);
    let o = seqprop(&["verify", &path]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("witness"));
}

#[test]
fn conduct_replay_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let path = design(dir.path(), "p7.json", &["--eps", "0.05", "--delta", "0.05", "--zeta", "2.6759", "-s", "7"]);
    let a = seqprop(&["conduct", &path, "--counts", "12,5,14,15,6"]);
    let b = seqprop(&["conduct", &path, "--counts", "12,5,14,15,6"]);
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(a.stdout, b.stdout);
    let text = stdout(&a);
    assert_eq!(text.matches("-> continue").count(), 4);
    assert!(text.contains("stage 5: group size 57, successes 6, k = 52, n = 288"));
    assert!(text.contains("stopped: p_hat = 52/288"));
    assert_eq!(seqprop(&["conduct", &path, "--counts", "60"]).status.code(), Some(3));
}

#[test]
fn conduct_reads_counts_from_stdin() {
    use std::io::Write;
    use std::process::Stdio;
    let dir = tempfile::tempdir().unwrap();
    let path = design(dir.path(), "p7.json", &["--eps", "0.05", "--delta", "0.05", "--zeta", "2.6759", "-s", "7"]);
    let mut child = Command::new(env!("CARGO_BIN_EXE_seqprop"))
        .args(["conduct", &path])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(b"12\n5\n14\n15\n6\n").unwrap();
    let o = child.wait_with_output().unwrap();
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("52/288"));
}

#[test]
fn sweep_shows_under_coverage_for_small_dilation() {
    let dir = tempfile::tempdir().unwrap();
    let path = design(
        dir.path(),
        "low.json",
        &["--eps", "0.1", "--delta", "0.05", "--rho", "0.1", "--zeta", "2.93", "--fully-sequential"],
    );
    let csv_path = dir.path().join("cov.csv");
    let o = seqprop(&["sweep", &path, "--quantity", "coverage", "-o", csv_path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let text = std::fs::read_to_string(&csv_path).unwrap();
    assert!(text.starts_with("p,coverage\n"));
    let min = text
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().parse::<f64>().unwrap())
        .fold(1.0, f64::min);
    assert!(min < 0.945, "min coverage {min}");
}

#[test]
fn boundary_export() {
    let dir = tempfile::tempdir().unwrap();
    let path = design(dir.path(), "p.json", &["--eps", "0.1", "--delta", "0.05", "--zeta", "2.6583", "-s", "3"]);
    let o = seqprop(&["sweep", &path, "--quantity", "boundary"]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("p_hat,n"));
    // two boundary points per continuing stage
    assert_eq!(lines.count(), 4);
}

#[test]
fn tables_reference_row() {
    let o = seqprop(&["tables", "--table", "2", "--eps", "0.1", "-s", "3", "--no-tune"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("reference zeta=2.6583 guaranteed"));
}

#[test]
fn bounds_report() {
    let o = seqprop(&["bounds", "--eps", "0.05", "--delta", "0.05"]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    assert!(text.contains("n_normal = 385"));
    assert!(text.contains("n_ch = 738"));
}
