use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::kv;
use crate::nn::{build_generator, Model};
use crate::profile::Profile;
use crate::trainer::{GanConfig, HeadMode, StopRule};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Condition {
    /// Plain sequential training.
    Std,
    /// Rehearsal on every earlier task's real data.
    Reh,
    /// Pseudo-rehearsal on GAN samples, with the GAN itself rehearsed.
    PseudoRec,
    /// Pseudo-rehearsal on uniform noise.
    PseudoRand,
    /// Elastic weight consolidation over the joint head.
    Ewc,
    /// Elastic weight consolidation over a shared head with known task.
    EwcC10,
    /// Rehearsal on a fixed-size buffer of stored real items.
    RoteLearn,
}

impl Condition {
    pub const ALL: [Condition; 7] = [
        Condition::Std,
        Condition::Reh,
        Condition::PseudoRec,
        Condition::PseudoRand,
        Condition::Ewc,
        Condition::EwcC10,
        Condition::RoteLearn,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Condition::Std => "std",
            Condition::Reh => "reh",
            Condition::PseudoRec => "pseudo_rec",
            Condition::PseudoRand => "pseudo_rand",
            Condition::Ewc => "ewc",
            Condition::EwcC10 => "ewc_c10",
            Condition::RoteLearn => "rote_learn",
        }
    }

    pub fn head_mode(self) -> HeadMode {
        match self {
            Condition::EwcC10 => HeadMode::Shared,
            _ => HeadMode::Joint,
        }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Condition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Condition::ALL.into_iter().find(|c| c.name() == s).ok_or_else(|| {
            let valid: Vec<&str> = Condition::ALL.iter().map(|c| c.name()).collect();
            Error::Config(format!("unknown condition '{s}' (valid: {})", valid.join(", ")))
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum TaskSpec {
    Synthetic { classes: usize, n_per_class: usize },
    Manifest(PathBuf),
}

impl fmt::Display for TaskSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TaskSpec::Synthetic { classes, n_per_class } => write!(f, "synthetic:{classes}:{n_per_class}"),
            TaskSpec::Manifest(p) => write!(f, "{}", p.display()),
        }
    }
}

impl FromStr for TaskSpec {
    type Err = Error;

    /// `synthetic:<classes>:<n_per_class>` or a manifest path.
    fn from_str(s: &str) -> Result<Self> {
        match s.strip_prefix("synthetic:") {
            Some(rest) => {
                let parts: Vec<usize> = rest.split(':').filter_map(|p| p.parse().ok()).collect();
                match parts[..] {
                    [classes, n_per_class] if classes >= 2 && n_per_class >= 1 => {
                        Ok(TaskSpec::Synthetic { classes, n_per_class })
                    }
                    _ => Err(Error::Config(format!("bad synthetic task '{s}' (synthetic:<classes>:<per-class>)"))),
                }
            }
            None => Ok(TaskSpec::Manifest(PathBuf::from(s))),
        }
    }
}

/// Tunable constants; defaults depend on the profile.
#[derive(Clone, Debug, PartialEq)]
pub struct Hyper {
    pub batch_size: usize,
    pub initial_lr: f32,
    pub later_lr: f32,
    pub patience: usize,
    pub max_epochs: usize,
    /// Validation improvement needed to reset the patience counter.
    pub min_delta: f64,
    pub pseudo_train: usize,
    pub pseudo_valid: usize,
    pub gan_rehearsal_size: usize,
    pub gan: GanConfig,
    pub fisher_samples: usize,
    pub lambda_ewc: f32,
    pub lambda_ewc_c10: f32,
    pub rote_buffer: usize,
    /// Training share of the rote buffer; the rest validates.
    pub rote_train_fraction: f64,
}

/// Stored images whose pixel count matches the generator's parameter count,
/// rounded to a multiple of four so the 3:1 split is exact.
pub fn rote_buffer_for(profile: Profile) -> usize {
    let params = Model::new(build_generator(profile), 0).param_count();
    let pixels = profile.channels() * profile.source_size() * profile.source_size();
    ((params as f64 / pixels as f64 / 4.0).round() as usize * 4).max(4)
}

impl Hyper {
    pub fn for_profile(profile: Profile) -> Self {
        match profile {
            Profile::Paper => Self {
                batch_size: 512,
                initial_lr: 1e-3,
                later_lr: 1e-4,
                patience: 10,
                max_epochs: 500,
                min_delta: 0.0,
                pseudo_train: 37_500,
                pseudo_valid: 12_500,
                gan_rehearsal_size: 50_000,
                gan: GanConfig {
                    epochs: 50,
                    batch_size: 128,
                    lr: 2e-4,
                    beta1: 0.5,
                },
                fisher_samples: 2_000,
                lambda_ewc: 270.0,
                lambda_ewc_c10: 267.0,
                rote_buffer: 1_500,
                rote_train_fraction: 0.75,
            },
            Profile::Mini => Self {
                batch_size: 16,
                initial_lr: 1e-3,
                later_lr: 1e-4,
                patience: 4,
                max_epochs: 100,
                min_delta: 1e-3,
                pseudo_train: 3_000,
                pseudo_valid: 1_000,
                gan_rehearsal_size: 4_000,
                gan: GanConfig {
                    epochs: 15,
                    batch_size: 32,
                    lr: 2e-4,
                    beta1: 0.5,
                },
                fisher_samples: 500,
                lambda_ewc: 270.0,
                lambda_ewc_c10: 267.0,
                rote_buffer: rote_buffer_for(Profile::Mini),
                rote_train_fraction: 0.75,
            },
        }
    }

    pub fn stop_rule(&self) -> StopRule {
        StopRule {
            patience: self.patience,
            max_epochs: self.max_epochs,
            min_delta: self.min_delta,
        }
    }

    pub fn lr_for_task(&self, task_index: usize) -> f32 {
        if task_index == 0 {
            self.initial_lr
        } else {
            self.later_lr
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub profile: Profile,
    pub condition: Condition,
    pub tasks: Vec<TaskSpec>,
    /// Seed of the synthetic task data, shared by all run seeds.
    pub data_seed: u64,
    pub seeds: Vec<u64>,
    pub hyper: Hyper,
    pub out_dir: PathBuf,
    /// Worker threads for augmentation.
    pub threads: usize,
    /// Write generator sample grids.
    pub grids: bool,
}

pub const MINI_CLASSES: usize = 5;
pub const MINI_PER_CLASS: usize = 150;

impl ExperimentConfig {
    /// Defaults: the mini profile gets three synthetic five-class tasks; the
    /// paper profile needs task manifests.
    pub fn new(profile: Profile, condition: Condition) -> Self {
        let tasks = match profile {
            Profile::Mini => vec![
                TaskSpec::Synthetic {
                    classes: MINI_CLASSES,
                    n_per_class: MINI_PER_CLASS,
                };
                3
            ],
            Profile::Paper => Vec::new(),
        };
        Self {
            profile,
            condition,
            tasks,
            data_seed: 0,
            seeds: vec![1, 2, 3],
            hyper: Hyper::for_profile(profile),
            out_dir: PathBuf::from("out"),
            threads: std::thread::available_parallelism().map_or(1, |n| n.get()),
            grids: true,
        }
    }

    /// Builds a config from `key = value` entries. The last `profile` entry
    /// picks the defaults; the remaining keys apply in order, so later
    /// entries (command-line overrides) win. Repeated `task` keys append,
    /// replacing the default task list.
    pub fn from_entries(entries: &[(String, String)]) -> Result<Self> {
        let profile = match entries.iter().rev().find(|(k, _)| k == "profile") {
            Some((_, v)) => v.parse()?,
            None => Profile::Mini,
        };
        let condition = match entries.iter().rev().find(|(k, _)| k == "condition") {
            Some((_, v)) => v.parse()?,
            None => Condition::Std,
        };
        let mut cfg = Self::new(profile, condition);
        let mut tasks_given = false;
        for (k, v) in entries {
            if k == "task" && !tasks_given {
                cfg.tasks.clear();
                tasks_given = true;
            }
            cfg.apply(k, v)?;
        }
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Vec<(String, String)>> {
        let mut entries = kv::read(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for (k, v) in &mut entries {
            if k == "task" && !v.starts_with("synthetic:") && Path::new(v.as_str()).is_relative() {
                *v = base.join(&*v).display().to_string();
            }
        }
        Ok(entries)
    }

    pub fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse().map_err(|_| Error::Config(format!("bad value for {key}: '{v}'")))
        }
        let h = &mut self.hyper;
        match key {
            "profile" | "condition" => {}
            "task" => self.tasks.push(value.parse()?),
            "seed" => self.seeds = vec![num(key, value)?],
            "seeds" => {
                self.seeds = kv::parse_list(value).ok_or_else(|| Error::Config(format!("bad seeds '{value}'")))?
            }
            "data_seed" => self.data_seed = num(key, value)?,
            "out" => self.out_dir = PathBuf::from(value),
            "threads" => self.threads = num::<usize>(key, value)?.max(1),
            "grids" => {
                self.grids = kv::parse_bool(value).ok_or_else(|| Error::Config(format!("bad grids '{value}'")))?
            }
            "batch_size" => h.batch_size = num(key, value)?,
            "initial_lr" => h.initial_lr = num(key, value)?,
            "later_lr" => h.later_lr = num(key, value)?,
            "patience" => h.patience = num(key, value)?,
            "max_epochs" => h.max_epochs = num(key, value)?,
            "min_delta" => h.min_delta = num(key, value)?,
            "pseudo_train" => h.pseudo_train = num(key, value)?,
            "pseudo_valid" => h.pseudo_valid = num(key, value)?,
            "gan_rehearsal_size" => h.gan_rehearsal_size = num(key, value)?,
            "gan_epochs" => h.gan.epochs = num(key, value)?,
            "gan_batch_size" => h.gan.batch_size = num(key, value)?,
            "gan_lr" => h.gan.lr = num(key, value)?,
            "gan_beta1" => h.gan.beta1 = num(key, value)?,
            "fisher_samples" => h.fisher_samples = num(key, value)?,
            "lambda_ewc" => h.lambda_ewc = num(key, value)?,
            "lambda_ewc_c10" => h.lambda_ewc_c10 = num(key, value)?,
            "rote_buffer" => h.rote_buffer = num(key, value)?,
            other => return Err(Error::Config(format!("unknown config key '{other}'"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.tasks.is_empty() {
            return Err(Error::Config("missing task manifests".into()));
        }
        for t in &self.tasks {
            if let TaskSpec::Manifest(p) = t {
                if !p.exists() {
                    return Err(Error::Config(format!("task manifest {} not found", p.display())));
                }
            }
        }
        self.validate_hyper()
    }

    /// The checks that do not touch task data.
    pub fn validate_hyper(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("no seeds given".into()));
        }
        let h = &self.hyper;
        if h.batch_size < 2 || h.batch_size % 2 == 1 {
            return Err(Error::Config(format!("batch_size {} must be even and at least 2", h.batch_size)));
        }
        if h.patience == 0 || h.max_epochs == 0 {
            return Err(Error::Config("patience and max_epochs must be positive".into()));
        }
        if h.pseudo_train == 0 || h.pseudo_valid == 0 || h.fisher_samples == 0 || h.rote_buffer < 2 {
            return Err(Error::Config("pseudo sizes, fisher_samples and rote_buffer must be positive".into()));
        }
        Ok(())
    }

    pub fn condition_dir(&self) -> PathBuf {
        self.out_dir.join(self.condition.name())
    }

    pub fn seed_dir(&self, seed: u64) -> PathBuf {
        self.condition_dir().join(seed.to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entries(pairs: &[(&str, &str)]) -> Vec<(String, String)> {
        pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }

    #[test]
    fn unknown_condition_lists_valid_ones() {
        let err = "bogus".parse::<Condition>().unwrap_err().to_string();
        assert!(err.contains("pseudo_rec") && err.contains("rote_learn"), "{err}");
    }

    #[test]
    fn later_entries_override() {
        let cfg = ExperimentConfig::from_entries(&entries(&[
            ("condition", "reh"),
            ("patience", "7"),
            ("seeds", "4,5"),
            ("patience", "2"),
            ("condition", "ewc"),
        ]))
        .unwrap();
        assert_eq!(cfg.condition, Condition::Ewc);
        assert_eq!(cfg.hyper.patience, 2);
        assert_eq!(cfg.seeds, vec![4, 5]);
        assert_eq!(cfg.tasks.len(), 3);
    }

    #[test]
    fn paper_profile_needs_manifests() {
        let cfg = ExperimentConfig::from_entries(&entries(&[("profile", "paper")])).unwrap();
        let err = cfg.validate().unwrap_err().to_string();
        assert!(err.contains("missing task manifests"), "{err}");
        assert_eq!(cfg.hyper.rote_buffer, 1500);
    }

    #[test]
    fn task_entries_replace_defaults() {
        let cfg = ExperimentConfig::from_entries(&entries(&[("task", "synthetic:4:10"), ("task", "synthetic:4:12")])).unwrap();
        assert_eq!(
            cfg.tasks,
            vec![
                TaskSpec::Synthetic { classes: 4, n_per_class: 10 },
                TaskSpec::Synthetic { classes: 4, n_per_class: 12 }
            ]
        );
    }

    #[test]
    fn rote_buffer_splits_three_to_one() {
        let n = rote_buffer_for(Profile::Mini);
        assert_eq!(n % 4, 0);
        let paper_equivalent = rote_buffer_for(Profile::Paper);
        assert!((1400..=1700).contains(&paper_equivalent), "{paper_equivalent}");
    }
}
