use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

/// Retention matrices of one condition across seeds:
/// `matrices[seed][trained_through][evaluated_task]`, lower-triangular.
#[derive(Clone, Debug, PartialEq)]
pub struct ConditionReport {
    pub condition: String,
    pub seeds: Vec<u64>,
    pub matrices: Vec<Vec<Vec<f64>>>,
}

impl ConditionReport {
    pub fn tasks(&self) -> usize {
        self.matrices.first().map_or(0, Vec::len)
    }

    fn column(&self, through: usize, task: usize) -> Vec<f64> {
        self.matrices.iter().map(|m| m[through][task]).collect()
    }

    pub fn mean(&self, through: usize, task: usize) -> f64 {
        let v = self.column(through, task);
        v.iter().sum::<f64>() / v.len() as f64
    }

    /// Sample standard deviation across seeds (zero for a single seed).
    pub fn stddev(&self, through: usize, task: usize) -> f64 {
        let v = self.column(through, task);
        if v.len() < 2 {
            return 0.0;
        }
        let m = v.iter().sum::<f64>() / v.len() as f64;
        (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
    }

    /// Mean over seeds of the average accuracy on tasks before the last,
    /// measured after the last task.
    pub fn final_previous_accuracy(&self) -> f64 {
        let last = self.tasks() - 1;
        let per_seed: Vec<f64> = self
            .matrices
            .iter()
            .map(|m| m[last][..last].iter().sum::<f64>() / last as f64)
            .collect();
        per_seed.iter().sum::<f64>() / per_seed.len() as f64
    }

    pub fn check(&self) -> Result<()> {
        for m in &self.matrices {
            for (i, row) in m.iter().enumerate() {
                if row.len() != i + 1 || row.iter().any(|a| !(0.0..=1.0).contains(a)) {
                    return Err(Error::SizeMismatch(format!("retention row {i} malformed: {row:?}")));
                }
            }
        }
        Ok(())
    }
}

/// `metrics.csv` → `metrics_summary.csv` beside it.
pub fn summary_path(path: &Path) -> PathBuf {
    let stem = path.file_stem().map_or("metrics".into(), |s| s.to_string_lossy().into_owned());
    path.with_file_name(format!("{stem}_summary.csv"))
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::io(path, std::io::Error::other(e))
}

/// One row per matrix entry per seed, plus the mean/stddev companion file.
pub fn emit_metrics_csv(report: &ConditionReport, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(["condition", "seed", "trained_through", "evaluated_task", "accuracy"])
        .map_err(|e| csv_err(path, e))?;
    for (seed, m) in report.seeds.iter().zip(&report.matrices) {
        for (through, row) in m.iter().enumerate() {
            for (task, acc) in row.iter().enumerate() {
                w.write_record([
                    report.condition.clone(),
                    seed.to_string(),
                    through.to_string(),
                    task.to_string(),
                    acc.to_string(),
                ])
                .map_err(|e| csv_err(path, e))?;
            }
        }
    }
    w.flush().map_err(|e| Error::io(path, e))?;

    let spath = summary_path(path);
    let mut s = csv::Writer::from_path(&spath).map_err(|e| csv_err(&spath, e))?;
    s.write_record(["condition", "trained_through", "evaluated_task", "mean", "stddev", "seeds"])
        .map_err(|e| csv_err(&spath, e))?;
    for through in 0..report.tasks() {
        for task in 0..=through {
            s.write_record([
                report.condition.clone(),
                through.to_string(),
                task.to_string(),
                report.mean(through, task).to_string(),
                report.stddev(through, task).to_string(),
                report.seeds.len().to_string(),
            ])
            .map_err(|e| csv_err(&spath, e))?;
        }
    }
    s.flush().map_err(|e| Error::io(&spath, e))
}

/// Parses a file written by [`emit_metrics_csv`] (or several concatenated
/// per-seed files' rows) back into a report.
pub fn read_metrics_csv(path: &Path) -> Result<ConditionReport> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let mut condition = String::new();
    let mut seeds: Vec<u64> = Vec::new();
    let mut matrices: Vec<Vec<Vec<f64>>> = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let bad = || Error::SizeMismatch(format!("{}: malformed row {:?}", path.display(), rec));
        if rec.len() != 5 {
            return Err(bad());
        }
        condition = rec[0].to_string();
        let seed: u64 = rec[1].parse().map_err(|_| bad())?;
        let through: usize = rec[2].parse().map_err(|_| bad())?;
        let task: usize = rec[3].parse().map_err(|_| bad())?;
        let acc: f64 = rec[4].parse().map_err(|_| bad())?;
        let si = match seeds.iter().position(|&s| s == seed) {
            Some(i) => i,
            None => {
                seeds.push(seed);
                matrices.push(Vec::new());
                seeds.len() - 1
            }
        };
        let m = &mut matrices[si];
        if through >= m.len() {
            m.resize_with(through + 1, Vec::new);
        }
        if task != m[through].len() {
            return Err(bad());
        }
        m[through].push(acc);
    }
    let report = ConditionReport {
        condition,
        seeds,
        matrices,
    };
    report.check()?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> ConditionReport {
        let m = |a: f64| vec![vec![0.9], vec![a, 0.95], vec![a / 2.0, 0.3, 0.91]];
        ConditionReport {
            condition: "reh".into(),
            seeds: vec![1, 2, 3],
            matrices: vec![m(0.8), m(0.7), m(0.6 + 1e-9)],
        }
    }

    #[test]
    fn csv_round_trip_and_summary() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("metrics.csv");
        let r = sample();
        emit_metrics_csv(&r, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 1 + 18);
        assert_eq!(read_metrics_csv(&path).unwrap(), r);

        let summary = std::fs::read_to_string(summary_path(&path)).unwrap();
        let row: Vec<&str> = summary.lines().nth(2).unwrap().split(',').collect();
        let v = [0.8f64, 0.7, 0.6 + 1e-9];
        let mean = v.iter().sum::<f64>() / 3.0;
        let sd = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 2.0).sqrt();
        assert_eq!(row[..3], ["reh", "1", "0"]);
        assert!((row[3].parse::<f64>().unwrap() - mean).abs() < 1e-12);
        assert!((row[4].parse::<f64>().unwrap() - sd).abs() < 1e-12);
    }

    #[test]
    fn final_previous_accuracy_averages_old_tasks() {
        let r = sample();
        let want = ((0.4 + 0.3) / 2.0 + (0.35 + 0.3) / 2.0 + ((0.6 + 1e-9) / 2.0 + 0.3) / 2.0) / 3.0;
        assert!((r.final_previous_accuracy() - want).abs() < 1e-12);
    }
}
