use std::fs;
use std::path::Path;

use pseudorec::harness::{
    aggregate_condition, emit_metrics_csv, read_metrics_csv, run_condition, Condition, ConditionReport, ExperimentConfig,
};
use pseudorec::Profile;

fn reduced(condition: Condition, out: &Path, tasks: usize) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::new(Profile::Mini, condition);
    cfg.out_dir = out.to_path_buf();
    cfg.seeds = vec![1];
    cfg.tasks.truncate(tasks);
    cfg
}

fn shrink(cfg: &mut ExperimentConfig) {
    for (k, v) in [
        ("task", "synthetic:5:40"),
        ("max_epochs", "2"),
        ("pseudo_train", "60"),
        ("pseudo_valid", "20"),
        ("gan_rehearsal_size", "64"),
        ("gan_epochs", "1"),
        ("fisher_samples", "20"),
    ] {
        cfg.apply(k, v).unwrap();
    }
}

fn log_of(cfg: &ExperimentConfig) -> String {
    fs::read_to_string(cfg.seed_dir(1).join("log.txt")).unwrap()
}

fn persisted(log: &str) -> Vec<u64> {
    log.lines()
        .filter_map(|l| l.split("persisted_bytes=").nth(1))
        .map(|v| v.trim().parse().unwrap())
        .collect()
}

#[test]
fn std_forgets_the_first_task() {
    let dir = tempfile::tempdir().unwrap();
    let report = run_condition(&reduced(Condition::Std, dir.path(), 2)).unwrap();
    let m = &report.matrices[0];
    assert!(m[0][0] >= 0.8, "{m:?}");
    assert!(m[1][0] < 0.05, "{m:?}");
}

#[test]
fn pseudo_rec_recursion_base_case_and_flat_state() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = reduced(Condition::PseudoRec, dir.path(), 0);
    shrink(&mut cfg);
    cfg.apply("task", "synthetic:5:40").unwrap();
    cfg.apply("task", "synthetic:5:40").unwrap();
    run_condition(&cfg).unwrap();
    let log = log_of(&cfg);
    assert!(log.contains("task=0 gan_rehearsal total=64 real=64 generated=0"), "{log}");
    assert!(log.contains("task=1 gan_rehearsal total=64 real=32 generated=32"));
    assert!(log.contains("task=2 pseudo train=60 valid=20"));
    let sizes = persisted(&log);
    assert_eq!(sizes.len(), 3);
    assert!(sizes.iter().all(|&s| s.abs_diff(sizes[0]) < 64), "{sizes:?}");
    let seed_dir = cfg.seed_dir(1);
    for f in ["generator.prcl", "discriminator.prcl", "classifier.prcl", "pseudo.prcl"] {
        assert!(seed_dir.join("checkpoints").join(f).exists(), "{f}");
    }
    assert!(seed_dir.join("grids/task2.png").exists());
}

#[test]
fn ewc_and_rote_learn_log_their_upkeep() {
    let dir = tempfile::tempdir().unwrap();
    for condition in [Condition::Ewc, Condition::EwcC10, Condition::RoteLearn] {
        let mut cfg = reduced(condition, dir.path(), 0);
        shrink(&mut cfg);
        cfg.apply("task", "synthetic:5:40").unwrap();
        run_condition(&cfg).unwrap();
        let log = log_of(&cfg);
        match condition {
            Condition::Ewc => assert!(log.contains("task=1 fisher samples=20 lambda=270 anchors=2"), "{log}"),
            Condition::EwcC10 => {
                assert!(log.contains("lambda=267"));
                assert!(log.contains("outputs=5 head=Shared"));
            }
            _ => assert!(log.contains("task=1 rote buffer=164 train=123 valid=41"), "{log}"),
        }
    }
}

#[test]
fn metrics_round_trip_and_aggregate() {
    let dir = tempfile::tempdir().unwrap();
    let report = ConditionReport {
        condition: "reh".into(),
        seeds: vec![1, 2, 3],
        matrices: (0..3)
            .map(|s| (0..3).map(|t| (0..=t).map(|k| 0.4 + 0.05 * (s + t + k) as f64).collect()).collect())
            .collect(),
    };
    let path = dir.path().join("metrics.csv");
    emit_metrics_csv(&report, &path).unwrap();
    assert_eq!(fs::read_to_string(&path).unwrap().lines().count(), 1 + 18);
    assert_eq!(read_metrics_csv(&path).unwrap(), report);

    let cond = dir.path().join("reh");
    for (i, &seed) in report.seeds.iter().enumerate() {
        let single = ConditionReport {
            condition: "reh".into(),
            seeds: vec![seed],
            matrices: vec![report.matrices[i].clone()],
        };
        fs::create_dir_all(cond.join(seed.to_string())).unwrap();
        emit_metrics_csv(&single, &cond.join(seed.to_string()).join("metrics.csv")).unwrap();
    }
    assert_eq!(aggregate_condition(&cond).unwrap(), report);
    let direct = {
        let v: Vec<f64> = report.matrices.iter().map(|m| m[2][1]).collect();
        let mean = v.iter().sum::<f64>() / 3.0;
        (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 2.0).sqrt()
    };
    assert!((report.stddev(2, 1) - direct).abs() < 1e-12);
}
