use std::path::Path;
use std::process::{Command, Output};

fn pseudorec(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pseudorec"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn unknown_condition_exits_1_and_names_valid_ones() {
    let o = pseudorec(&["run", "--condition", "bogus"]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    for name in ["std", "reh", "pseudo_rec", "pseudo_rand", "ewc", "ewc_c10", "rote_learn"] {
        assert!(err.contains(name), "{err}");
    }
}

#[test]
fn paper_profile_without_manifests_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let o = pseudorec(&["run", "--profile", "paper", "--condition", "std", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("missing task manifests"));
}

#[test]
fn usage_errors_print_synopsis_and_exit_1() {
    let o = pseudorec(&["run", "--no-such-flag"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("Usage"));
    let o = pseudorec(&["run", "--seed", "1", "--seeds", "1,2"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn bad_override_is_a_config_error() {
    let o = pseudorec(&["run", "--dry-run", "--set", "patience"]);
    assert_eq!(o.status.code(), Some(1));
    let o = pseudorec(&["run", "--dry-run", "--set", "no_such_key=3"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn paper_dry_run_prints_protocol_constants() {
    let dir = tempfile::tempdir().unwrap();
    let o = pseudorec(&["run", "--profile", "paper", "--condition", "pseudo_rec", "--dry-run", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = String::from_utf8(o.stdout).unwrap();
    for needle in [
        "batch_size=512 task0_new=512 task0_replay=0 later_new=256 later_replay=256",
        "pseudo_train=37500 pseudo_valid=12500",
        "gan_rehearsal_size=50000",
        "patience=10",
        "lr_task0=0.001 lr_later=0.0001",
        "lambda_ewc=270 lambda_ewc_c10=267",
        "rote_buffer=1500 rote_train=1125 rote_valid=375",
    ] {
        assert!(out.contains(needle), "missing '{needle}' in\n{out}");
    }
    assert!(dir.path().join("pseudo_rec/protocol.txt").exists());
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("exp.cfg");
    std::fs::write(&cfg, "profile = mini\ncondition = reh\npatience = 7\n").unwrap();
    let o = pseudorec(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--condition",
        "ewc",
        "--set",
        "patience=3",
        "--dry-run",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = String::from_utf8(o.stdout).unwrap();
    assert!(out.contains("condition=ewc"), "{out}");
    assert!(out.contains("patience=3 "), "{out}");
}

#[test]
fn mini_std_run_writes_metrics_and_report_reaggregates() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = pseudorec(&["run", "--condition", "std", "--profile", "mini", "--seed", "1", "--out", out]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let metrics = dir.path().join("std/metrics.csv");
    let seed_dir = dir.path().join("std/1");
    assert!(metrics.exists());
    for f in ["metrics.csv", "log.txt", "checkpoints/classifier.prcl"] {
        assert!(seed_dir.join(f).exists(), "{f}");
    }
    let before = std::fs::read(&metrics).unwrap();
    std::fs::remove_file(&metrics).unwrap();
    let o = pseudorec(&["report", out]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(std::fs::read(&metrics).unwrap(), before);
    assert!(String::from_utf8(o.stdout).unwrap().starts_with("std:"));
}

#[test]
fn report_on_empty_dir_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = pseudorec(&["report", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn gen_grid_rejects_missing_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let o = pseudorec(&[
        "gen-grid",
        "--checkpoint",
        dir.path().join("none.prcl").to_str().unwrap(),
        "--out",
        dir.path().join("g.png").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!Path::new(&dir.path().join("g.png")).exists());
}

#[test]
fn check_passes_on_a_small_sample() {
    let o = pseudorec(&["check", "--cases", "3", "--per-param", "64"]);
    let out = String::from_utf8(o.stdout).unwrap();
    assert_eq!(o.status.code(), Some(0), "{out}");
    assert!(out.lines().all(|l| l.starts_with("PASS")), "{out}");
}
