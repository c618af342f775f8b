//! Exit codes and override handling of the `dru` binary.

use std::path::Path;
use std::process::Command;

const CONFIG: &str = "synthetic_n = 40\nn_labeled = 6\ntrials = 1\nseed = 3\nmax_steps = 3000\nlr_decay_every = 1000\n";

fn dru(dir: &Path, args: &[&str]) -> (i32, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_dru")).current_dir(dir).args(args).output().unwrap();
    (out.status.code().unwrap(), String::from_utf8_lossy(&out.stdout).into_owned())
}

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("run.cfg"), CONFIG).unwrap();
    dir
}

#[test]
fn successful_run_exits_zero_and_records_seed() {
    let dir = setup();
    let (code, _) = dru(dir.path(), &["min-radius", "--config", "run.cfg", "--seed", "17", "--output", "m.csv"]);
    assert_eq!(code, 0);
    let csv = std::fs::read_to_string(dir.path().join("m.csv")).unwrap();
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let col = header.iter().position(|h| *h == "seed").unwrap();
    for line in lines {
        assert_eq!(line.split(',').nth(col).unwrap(), "17");
    }
    assert!(dir.path().join("m.csv.meta").exists());
}

#[test]
fn unknown_subcommand_is_a_usage_error() {
    let dir = setup();
    assert_eq!(dru(dir.path(), &["no-such-command"]).0, 1);
}

#[test]
fn missing_config_is_a_usage_error() {
    let dir = setup();
    assert_eq!(dru(dir.path(), &["bound", "--config", "absent.cfg"]).0, 1);
}

#[test]
fn unknown_strategy_is_a_usage_error() {
    let dir = setup();
    assert_eq!(dru(dir.path(), &["active", "--config", "run.cfg", "--strategy", "bogus"]).0, 1);
}

#[test]
fn radius_below_minimum_is_infeasible() {
    let dir = setup();
    let (code, _) = dru(dir.path(), &["train-dru", "--config", "run.cfg", "--eps", "0", "--output", "t.csv"]);
    assert_eq!(code, 2);
}
