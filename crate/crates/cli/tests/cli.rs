use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

const FIXTURES: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/../../fixtures");
const NOW: &str = "2026-03-01T12:00:00Z";

fn fixture(rel: &str) -> PathBuf {
    Path::new(FIXTURES).join(rel)
}

fn golden_db() -> tempfile::TempDir {
    let tmp = tempfile::tempdir().unwrap();
    for entry in fs::read_dir(fixture("golden/db")).unwrap() {
        let entry = entry.unwrap();
        fs::copy(entry.path(), tmp.path().join(entry.file_name())).unwrap();
    }
    tmp
}

fn wificue(db: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wificue"))
        .arg("--db")
        .arg(db)
        .args(["--now", NOW])
        .args(args)
        .env_remove("WIFICUE_WIGLE_API_NAME")
        .env_remove("WIFICUE_WIGLE_API_TOKEN")
        .env_remove("WIFICUE_API_TOKEN")
        .output()
        .unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8(out.stderr.clone()).unwrap()
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn ingest_reports_counts_and_is_idempotent() {
    let db = tempfile::tempdir().unwrap();
    let scan = fixture("golden/scan.jsonl");
    let out = wificue(db.path(), &["ingest", "--format", "canonical", path_str(&scan)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(stdout(&out).starts_with("accepted 12 skipped 0\n"), "{}", stdout(&out));
    let store = fs::read(db.path().join("observations.jsonl")).unwrap();

    let out = wificue(db.path(), &["ingest", path_str(&scan)]);
    assert!(stdout(&out).starts_with("accepted 0 skipped 12\n"));
    assert_eq!(fs::read(db.path().join("observations.jsonl")).unwrap(), store);
}

#[test]
fn ingest_errors() {
    let db = tempfile::tempdir().unwrap();
    let out = wificue(db.path(), &["ingest", "/definitely/not/here.jsonl"]);
    assert_eq!(code(&out), 1);
    let scan = fixture("golden/scan.jsonl");
    let out = wificue(db.path(), &["ingest", "--format", "kismet", path_str(&scan)]);
    assert_eq!(code(&out), 2);
}

#[test]
fn ingest_airodump() {
    let db = tempfile::tempdir().unwrap();
    let csv = fixture("airodump/sample.csv");
    let out = wificue(db.path(), &["ingest", "--format", "airodump", path_str(&csv)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(stdout(&out).starts_with("accepted 3 skipped 0\n"));
}

#[test]
fn assess_json_matches_golden_and_signals_avoid() {
    let db = golden_db();
    let scan = fixture("golden/scan.jsonl");
    for posture in ["conservative", "balanced", "permissive"] {
        let out = wificue(db.path(), &["assess", path_str(&scan), "--posture", posture, "--output", "json"]);
        assert_eq!(code(&out), 3, "{}", stderr(&out));
        let golden = fs::read_to_string(fixture(&format!("golden/expected/assessment-{posture}.json"))).unwrap();
        assert_eq!(stdout(&out), golden, "posture {posture}");
    }
}

#[test]
fn assess_table_and_exit_codes() {
    let db = golden_db();
    let out = wificue(db.path(), &["assess", path_str(&fixture("clean/scan.jsonl"))]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let table = stdout(&out);
    assert!(table.starts_with("VERDICT"));
    assert!(table.contains("ACCEPTABLE") && table.contains("OfficeSecure"), "{table}");

    let empty = tempfile::NamedTempFile::new().unwrap();
    let out = wificue(db.path(), &["assess", path_str(empty.path())]);
    assert_eq!(code(&out), 2);

    let out = wificue(db.path(), &["assess", path_str(&fixture("clean/scan.jsonl")), "--posture", "reckless"]);
    assert_eq!(code(&out), 2);

    let bad = tempfile::NamedTempFile::new().unwrap();
    fs::write(bad.path(), "{\"bssid\": 1}\n").unwrap();
    let out = wificue(db.path(), &["assess", path_str(bad.path())]);
    assert_eq!(code(&out), 1);
}

#[test]
fn assess_does_not_write_history() {
    let db = golden_db();
    let before = fs::read(db.path().join("observations.jsonl")).unwrap();
    wificue(db.path(), &["assess", path_str(&fixture("golden/scan.jsonl"))]);
    assert_eq!(fs::read(db.path().join("observations.jsonl")).unwrap(), before);
}

#[test]
fn probe_requires_acknowledgement() {
    let db = tempfile::tempdir().unwrap();
    let baselines = fixture("baselines");
    let out = wificue(
        db.path(),
        &["probe", "--bssid", "00:14:22:10:00:04", "--baselines", path_str(&baselines), "--output", "json"],
    );
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains(wificue_core::probe::PROBE_WARNING));
    assert!(!db.path().join("probes.jsonl").exists());
}

#[test]
fn feedback_add() {
    let db = tempfile::tempdir().unwrap();
    let out = wificue(db.path(), &["feedback", "add", "--bssid", "00:14:22:10:00:04", "--category", "NO_INTERNET"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let stored = fs::read_to_string(db.path().join("feedback.jsonl")).unwrap();
    assert!(stored.contains("\"NO_INTERNET\"") && stored.contains(NOW), "{stored}");

    let out = wificue(db.path(), &["feedback", "add", "--bssid", "00:14:22:10:00:04", "--category", "HAUNTED"]);
    assert_eq!(code(&out), 2);
    let out = wificue(
        db.path(),
        &["feedback", "add", "--bssid", "00:14:22:10:00:04", "--category", "SLOW", "--observed-at", "2026-03-05T00:00:00Z"],
    );
    assert_eq!(code(&out), 2);
}

#[test]
fn oui_update_installs_table() {
    let db = tempfile::tempdir().unwrap();
    let out = wificue(db.path(), &["oui", "update", "--file", path_str(&fixture("golden/db/manuf"))]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(stdout(&out).starts_with("loaded 8 entries, source_version sha256:"), "{}", stdout(&out));
    assert_eq!(
        fs::read(db.path().join("manuf")).unwrap(),
        fs::read(fixture("golden/db/manuf")).unwrap()
    );
    let out = wificue(db.path(), &["oui", "update", "--file", "/no/such/manuf"]);
    assert_eq!(code(&out), 1);
}

#[test]
fn wigle_lookup_offline() {
    let db = tempfile::tempdir().unwrap();
    wificue(db.path(), &["ingest", path_str(&fixture("golden/scan.jsonl"))]);
    let dir = fixture("wigle");
    let out = wificue(db.path(), &["wigle", "lookup", "--bssid", "00:14:22:10:00:01", "--offline-fixtures", path_str(&dir)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let v: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(v["status"], "LOCATION_MISMATCH");

    let out = wificue(db.path(), &["wigle", "lookup", "--bssid", "00:14:22:10:00:06", "--offline-fixtures", path_str(&dir)]);
    assert_eq!(code(&out), 1);
    let out = wificue(db.path(), &["wigle", "lookup", "--bssid", "00:14:22:10:00:06"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn help_and_version_exit_zero() {
    let db = tempfile::tempdir().unwrap();
    assert_eq!(code(&wificue(db.path(), &["--help"])), 0);
    assert_eq!(code(&wificue(db.path(), &["--version"])), 0);
    assert_eq!(code(&wificue(db.path(), &["frobnicate"])), 2);
}

#[test]
fn serve_prints_bound_address() {
    let db = tempfile::tempdir().unwrap();
    let mut child = Command::new(env!("CARGO_BIN_EXE_wificue"))
        .arg("--db")
        .arg(db.path())
        .args(["serve", "--listen", "127.0.0.1:0", "--baselines"])
        .arg(fixture("baselines"))
        .env_remove("WIFICUE_API_TOKEN")
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stdout.take().unwrap()).read_line(&mut line).unwrap();
    child.kill().unwrap();
    child.wait().unwrap();
    assert!(line.starts_with("listening on http://127.0.0.1:"), "{line}");
    assert!(!line.trim_end().ends_with(":0"), "{line}");
}

#[test]
fn serve_refuses_malformed_baselines() {
    let db = tempfile::tempdir().unwrap();
    let out = wificue(
        db.path(),
        &["serve", "--listen", "127.0.0.1:0", "--baselines", path_str(&fixture("baselines-malformed"))],
    );
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("dns.json"), "{}", stderr(&out));
}
