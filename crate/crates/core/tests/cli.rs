use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_otfs-ra"))
}

#[test]
fn oracle_check_passes() {
    let out = bin().args(["oracle-check", "--instances", "10"]).output().unwrap();
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("10 instances"));
}

#[test]
fn run_writes_csv_and_sidecar() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("r.csv");
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, "trials = 1\n").unwrap();
    let out = bin()
        .arg("run")
        .arg(&cfg)
        .args(["--snr", "10", "--antennas", "4", "--algos", "conv2d,delta", "--out"])
        .arg(&csv)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().count(), 3);
    assert!(dir.path().join("r.json").exists());
}

#[test]
fn bad_input_exits_with_error_code() {
    let out = bin().args(["run", "--antennas", "5", "--out", "/dev/null"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let out = bin().args(["run", "--algos", "nope"]).output().unwrap();
    assert!(!out.status.success());
}
