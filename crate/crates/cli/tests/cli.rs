use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn scenario(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)
}

fn v2gsim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_v2gsim")).args(args).output().unwrap()
}

fn run_into(out: &Path, scenario: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["--scenario", scenario.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    v2gsim(&args)
}

fn record<'a>(metrics: &'a str, key: &str) -> &'a str {
    metrics
        .lines()
        .find_map(|l| l.strip_prefix(key).and_then(|r| r.strip_prefix('=')))
        .unwrap_or_else(|| panic!("no {key} in metrics"))
}

#[test]
fn honest_run_writes_reports_with_the_static_counts() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_into(dir.path(), &scenario("honest.toml"), &[]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let metrics = fs::read_to_string(dir.path().join("metrics.txt")).unwrap();
    assert_eq!(record(&metrics, "verdict"), "ok");
    assert_eq!(record(&metrics, "ev.ecm"), "2");
    assert_eq!(record(&metrics, "ev.hash"), "3");
    assert_eq!(record(&metrics, "cs.ecm"), "5");
    assert_eq!(record(&metrics, "cag.tokens_in"), "8");
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("ordering ECM    EV <= CAG < CS: holds"), "{stdout}");
    assert!(stdout.contains("ordering tokens EV <= CS < CAG: holds"), "{stdout}");
    let trace = fs::read_to_string(dir.path().join("trace.log")).unwrap();
    assert!(trace.lines().any(|l| l.contains("tag=M5") && l.contains("verdict=accepted")));
    // No consensus section: the ledger file is present and empty.
    assert_eq!(fs::read(dir.path().join("ledger.bin")).unwrap(), Vec::<u8>::new());
}

#[test]
fn replay_attack_is_reported_as_defeated() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_into(dir.path(), &scenario("attack_replay_m2.toml"), &[]);
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8(out.stdout).unwrap().contains("attack defeated"));
    let metrics = fs::read_to_string(dir.path().join("metrics.txt")).unwrap();
    assert_eq!(record(&metrics, "verdict"), "attack defeated");
    assert_eq!(record(&metrics, "tx.created"), "0");
}

#[test]
fn malformed_scenario_exits_2_with_a_line_number() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    fs::write(&path, "name = \"bad\"\nseed = 1\n\n[network]\ndelay_ms = \"five\"\n").unwrap();
    let out = run_into(dir.path(), &path, &[]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8(out.stderr).unwrap().contains("line 5"));
}

#[test]
fn unmet_expectation_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("wrong.toml");
    let text = fs::read_to_string(scenario("honest.toml")).unwrap().replace("\"authenticated\"", "\"terminated\"");
    fs::write(&path, text).unwrap();
    let out = run_into(dir.path(), &path, &[]);
    assert_eq!(out.status.code(), Some(1));
    let metrics = fs::read_to_string(dir.path().join("metrics.txt")).unwrap();
    assert_eq!(record(&metrics, "verdict"), "failed");
}

#[test]
fn consensus_flags_need_a_consensus_section() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_into(dir.path(), &scenario("honest.toml"), &["--speaker-term", "2"]);
    assert_eq!(out.status.code(), Some(2));
    let out = run_into(dir.path(), &scenario("consensus_honest.toml"), &["--block-interval-ms", "7"]);
    assert_eq!(out.status.code(), Some(2), "odd interval must be refused");
}

#[test]
fn overrides_apply() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_into(dir.path(), &scenario("honest.toml"), &["--seed", "99", "--curve", "toy", "--window-ms", "800"]);
    assert_eq!(out.status.code(), Some(0));
    let metrics = fs::read_to_string(dir.path().join("metrics.txt")).unwrap();
    assert_eq!(record(&metrics, "seed"), "99");
    assert_eq!(record(&metrics, "curve"), "toy");
}

#[test]
fn ledgers_verify_reproduce_and_localize_corruption() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for dir in [&a, &b] {
        let out = run_into(dir.path(), &scenario("consensus_honest.toml"), &[]);
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    }
    let ledger = a.path().join("ledger.bin");
    let bytes = fs::read(&ledger).unwrap();
    assert_eq!(bytes, fs::read(b.path().join("ledger.bin")).unwrap());
    assert_eq!(
        fs::read(a.path().join("trace.log")).unwrap(),
        fs::read(b.path().join("trace.log")).unwrap()
    );

    let out = v2gsim(&["verify-ledger", ledger.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(String::from_utf8(out.stdout).unwrap().trim(), "OK: 8 blocks");

    // Walk to the block at height 2 and corrupt a byte in its body.
    let mut at = 0;
    for _ in 0..2 {
        at += 4 + u32::from_be_bytes(bytes[at..at + 4].try_into().unwrap()) as usize;
    }
    let mut bad = bytes.clone();
    bad[at + 20] ^= 0x80;
    let corrupt = a.path().join("corrupt.bin");
    fs::write(&corrupt, bad).unwrap();
    let out = v2gsim(&["verify-ledger", corrupt.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8(out.stdout).unwrap().starts_with("DIVERGENCE at height 2"));

    let empty = a.path().join("empty.bin");
    fs::write(&empty, []).unwrap();
    let out = v2gsim(&["verify-ledger", empty.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(String::from_utf8(out.stdout).unwrap().trim(), "OK: 0 blocks");
}

#[test]
fn missing_ledger_file_is_a_config_error() {
    let out = v2gsim(&["verify-ledger", "/nonexistent/ledger.bin"]);
    assert_eq!(out.status.code(), Some(2));
}
