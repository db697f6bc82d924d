use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::{index::sample, SliceRandom};

use super::config::{Condition, ExperimentConfig, TaskSpec};
use super::grid::emit_image_grid;
use super::report::{emit_metrics_csv, read_metrics_csv, ConditionReport};
use crate::autodiff::Tensor;
use crate::data::{load_raw_task, make_synthetic_task, one_hot, preprocess_eval_batch, AugmentConfig, TaskDataset};
use crate::error::{Error, Result};
use crate::losses::{fisher_diagonal, FisherState};
use crate::nn::{build_classifier, build_discriminator, build_generator, Model, ModelKind};
use crate::replay::{
    build_gan_rehearsal_set, build_pseudo_dataset, build_uniform_noise_pseudo, generate_pseudo_images,
    FrozenClassifier, PseudoDataset,
};
use crate::seed;
use crate::trainer::{
    batch_split, early_stop_loop, evaluate_accuracy, save_checkpoint, train_epoch, train_gan, validation_loss,
    EpochSetup, HeadMode, ModelCheckpoint, OptimizerState, RawCheckpoint, Source, ValidSet,
};

const GRID_SIDE: usize = 8;

/// Appends lines to `log.txt`.
pub struct RunLog {
    file: File,
    start: Instant,
}

impl RunLog {
    pub fn create(path: &Path) -> Result<Self> {
        let file = OpenOptions::new()
            .create(true)
            .write(true)
            .truncate(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        Ok(Self {
            file,
            start: Instant::now(),
        })
    }

    pub fn line(&mut self, text: impl AsRef<str>) -> Result<()> {
        writeln!(self.file, "[{:8.2}s] {}", self.start.elapsed().as_secs_f64(), text.as_ref())
            .map_err(|e| Error::Io {
                path: PathBuf::from("log.txt"),
                source: e,
            })
    }
}

/// `protocol key=value ...` lines describing the configured training rules.
pub fn protocol_lines(cfg: &ExperimentConfig) -> Result<Vec<String>> {
    let h = &cfg.hyper;
    let (first_new, first_replay) = batch_split(h.batch_size, 0, true)?;
    let (later_new, later_replay) = batch_split(h.batch_size, 1, true)?;
    let rote_train = (h.rote_buffer as f64 * h.rote_train_fraction).round() as usize;
    Ok(vec![
        format!(
            "protocol profile={} condition={} tasks={} seeds={:?}",
            cfg.profile,
            cfg.condition,
            cfg.tasks.len(),
            cfg.seeds
        ),
        format!(
            "protocol batch_size={} task0_new={first_new} task0_replay={first_replay} later_new={later_new} later_replay={later_replay}",
            h.batch_size
        ),
        format!("protocol pseudo_train={} pseudo_valid={}", h.pseudo_train, h.pseudo_valid),
        format!(
            "protocol gan_rehearsal_size={} gan_rehearsal_real={} gan_rehearsal_generated={}",
            h.gan_rehearsal_size,
            h.gan_rehearsal_size / 2,
            h.gan_rehearsal_size - h.gan_rehearsal_size / 2
        ),
        format!(
            "protocol patience={} max_epochs={} min_delta={}",
            h.patience, h.max_epochs, h.min_delta
        ),
        format!("protocol lr_task0={} lr_later={}", h.initial_lr, h.later_lr),
        format!("protocol lambda_ewc={} lambda_ewc_c10={}", h.lambda_ewc, h.lambda_ewc_c10),
        format!(
            "protocol rote_buffer={} rote_train={rote_train} rote_valid={}",
            h.rote_buffer,
            h.rote_buffer - rote_train
        ),
        format!(
            "protocol fisher_samples={} gan_epochs={} gan_batch_size={} gan_lr={} gan_beta1={}",
            h.fisher_samples, h.gan.epochs, h.gan.batch_size, h.gan.lr, h.gan.beta1
        ),
    ])
}

pub fn load_tasks(cfg: &ExperimentConfig) -> Result<Vec<TaskDataset>> {
    let tasks = cfg
        .tasks
        .iter()
        .enumerate()
        .map(|(i, spec)| match spec {
            TaskSpec::Synthetic { classes, n_per_class } => Ok(make_synthetic_task(i, *classes, *n_per_class, cfg.data_seed)),
            TaskSpec::Manifest(p) => load_raw_task(p, i),
        })
        .collect::<Result<Vec<_>>>()?;
    let want = [cfg.profile.channels(), cfg.profile.source_size(), cfg.profile.source_size()];
    for t in &tasks {
        if t.image_shape() != want {
            return Err(Error::Config(format!(
                "{} has images {:?}; the {} profile expects {:?}",
                t.name,
                t.image_shape(),
                cfg.profile,
                want
            )));
        }
        if t.classes != tasks[0].classes {
            return Err(Error::Config("all tasks must have the same number of classes".into()));
        }
    }
    Ok(tasks)
}

fn dir_size(dir: &Path) -> Result<u64> {
    let mut total = 0;
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        total += entry.metadata().map_err(|e| Error::io(entry.path(), e))?.len();
    }
    Ok(total)
}

/// Real items kept by the rote-learning condition.
struct RoteBuffer {
    images: Tensor,
    targets: Tensor,
    groups: Vec<usize>,
    train: Vec<usize>,
    valid: Vec<usize>,
}

fn refresh_rote_buffer(tasks: &[TaskDataset], targets: &[Tensor], size: usize, train_fraction: f64, seed: u64) -> RoteBuffer {
    let mut rng = seed::rng(seed);
    let (mut images, mut tgts, mut groups) = (Vec::new(), Vec::new(), Vec::new());
    for (k, task) in tasks.iter().enumerate() {
        let share = size / tasks.len() + usize::from(k < size % tasks.len());
        let picks: Vec<usize> = sample(&mut rng, task.train.len(), share.min(task.train.len()))
            .into_iter()
            .map(|i| task.train[i])
            .collect();
        images.push(task.images_at(&picks));
        tgts.push(targets[k].gather_rows(&picks));
        groups.extend(std::iter::repeat_n(k, picks.len()));
    }
    let n = groups.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let n_train = (n as f64 * train_fraction).round() as usize;
    RoteBuffer {
        images: Tensor::concat_rows(&images.iter().collect::<Vec<_>>()).expect("same shapes"),
        targets: Tensor::concat_rows(&tgts.iter().collect::<Vec<_>>()).expect("same widths"),
        groups,
        train: order[..n_train].to_vec(),
        valid: order[n_train..].to_vec(),
    }
}

fn concat_tasks(tasks: &[TaskDataset], targets: &[Tensor]) -> Source {
    let mut offset = 0;
    let mut train = Vec::new();
    let mut groups = Vec::new();
    for t in tasks {
        train.extend(t.train.iter().map(|i| i + offset));
        groups.extend(std::iter::repeat_n(t.task_index, t.len()));
        offset += t.len();
    }
    Source {
        name: "rehearsal".into(),
        images: Tensor::concat_rows(&tasks.iter().map(|t| &t.images).collect::<Vec<_>>()).expect("same shapes"),
        targets: Tensor::concat_rows(&targets[..tasks.len()].iter().collect::<Vec<_>>()).expect("same widths"),
        groups,
        train,
        augment: Some(AugmentConfig::train(0, false)),
        flip_groups: tasks.iter().filter(|t| t.flip_lr).map(|t| t.task_index).collect(),
    }
}

/// Group id used for pseudo items; never collides with a task index.
const PSEUDO_GROUP: usize = usize::MAX;

fn pseudo_source(p: &PseudoDataset) -> (Source, ValidSet) {
    (
        Source {
            name: "pseudo".into(),
            images: p.images.clone(),
            targets: p.soft_targets.clone(),
            groups: vec![PSEUDO_GROUP; p.len()],
            train: p.train.clone(),
            augment: None,
            flip_groups: Vec::new(),
        },
        ValidSet {
            images: p.images.gather_rows(&p.valid),
            targets: p.soft_targets.gather_rows(&p.valid),
            groups: vec![PSEUDO_GROUP; p.valid.len()],
        },
    )
}

/// Trains every task in order for one seed, writing the log, checkpoints and
/// grids under `dir`. Returns the lower-triangular accuracy matrix.
pub fn sequential_task_loop(cfg: &ExperimentConfig, seed: u64, dir: &Path) -> Result<Vec<Vec<f64>>> {
    let ckpt_dir = dir.join("checkpoints");
    let grid_dir = dir.join("grids");
    fs::create_dir_all(&ckpt_dir).map_err(|e| Error::io(&ckpt_dir, e))?;
    let mut log = RunLog::create(&dir.join("log.txt"))?;
    for line in protocol_lines(cfg)? {
        log.line(line)?;
    }
    let h = &cfg.hyper;
    let profile = cfg.profile;
    let crop = profile.crop_size();
    let tasks = load_tasks(cfg)?;
    let classes = tasks[0].classes;
    let head = cfg.condition.head_mode();
    let outputs = match head {
        HeadMode::Joint => classes * tasks.len(),
        HeadMode::Shared => classes,
    };
    let targets: Vec<Tensor> = tasks
        .iter()
        .map(|t| match head {
            HeadMode::Joint => one_hot(&t.labels.iter().map(|&l| t.global_unit(l)).collect::<Vec<_>>(), outputs),
            HeadMode::Shared => one_hot(&t.labels, outputs),
        })
        .collect();
    log.line(format!("seed={seed} outputs={outputs} head={head:?}"))?;

    let kind = ModelKind::Classifier { outputs };
    let mut classifier = Model::new(build_classifier(profile, outputs), seed::derive(seed, &[seed::tag("classifier")]));
    let mut gan = match cfg.condition {
        Condition::PseudoRec => Some((
            Model::new(build_generator(profile), seed::derive(seed, &[seed::tag("generator")])),
            Model::new(build_discriminator(profile), seed::derive(seed, &[seed::tag("discriminator")])),
        )),
        _ => None,
    };
    let mut pseudo: Option<PseudoDataset> = None;
    let mut fisher: Vec<FisherState> = Vec::new();
    let mut rote: Option<RoteBuffer> = None;
    let mut matrix = Vec::new();

    for (t, task) in tasks.iter().enumerate() {
        let task_seed = seed::derive(seed, &[seed::tag("task"), t as u64]);
        let lr = h.lr_for_task(t);
        let mut opt = OptimizerState::adam(classifier.params(), lr);
        log.line(format!("task={t} start lr={lr} optimizer_step={}", opt.step))?;

        let new = Source {
            name: format!("task{t}"),
            images: task.images.clone(),
            targets: targets[t].clone(),
            groups: vec![t; task.len()],
            train: task.train.clone(),
            augment: Some(AugmentConfig::train(crop, task.flip_lr)),
            flip_groups: if task.flip_lr { vec![t] } else { Vec::new() },
        };
        let mut valid = vec![ValidSet::from_task(task, &targets[t], crop)];
        let replay: Option<Source> = if t == 0 {
            None
        } else {
            match cfg.condition {
                Condition::Reh => {
                    valid.extend(tasks[..t].iter().map(|p| ValidSet::from_task(p, &targets[p.task_index], crop)));
                    Some(concat_tasks(&tasks[..t], &targets))
                }
                Condition::RoteLearn => {
                    let buf = rote.as_ref().expect("buffer filled after the first task");
                    valid.push(ValidSet {
                        images: preprocess_eval_batch(&buf.images.gather_rows(&buf.valid), crop),
                        targets: buf.targets.gather_rows(&buf.valid),
                        groups: buf.valid.iter().map(|&i| buf.groups[i]).collect(),
                    });
                    Some(Source {
                        name: "rote".into(),
                        images: buf.images.clone(),
                        targets: buf.targets.clone(),
                        groups: buf.groups.clone(),
                        train: buf.train.clone(),
                        augment: Some(AugmentConfig::train(crop, false)),
                        flip_groups: tasks[..t].iter().filter(|p| p.flip_lr).map(|p| p.task_index).collect(),
                    })
                }
                Condition::PseudoRec | Condition::PseudoRand => {
                    let (src, v) = pseudo_source(pseudo.as_ref().expect("pseudo set built after the first task"));
                    valid.push(v);
                    Some(src)
                }
                Condition::Std | Condition::Ewc | Condition::EwcC10 => None,
            }
        };
        let setup = EpochSetup {
            new: &new,
            replay: replay.as_ref(),
            ewc: &fisher,
            batch_size: h.batch_size,
            task_index: t,
            seed: task_seed,
            threads: cfg.threads,
        };
        let mut epoch_lines = Vec::new();
        let outcome = early_stop_loop(
            &mut classifier,
            |m, epoch| {
                let metrics = train_epoch(m, &setup, &mut opt, epoch)?;
                let counts: Vec<String> = metrics.counts.iter().map(|(n, c)| format!("{n}_items={c}")).collect();
                epoch_lines.push(format!(
                    "task={t} epoch={} lr={} steps={} train_loss={:.6} {}",
                    epoch + 1,
                    opt.lr,
                    metrics.steps,
                    metrics.loss,
                    counts.join(" ")
                ));
                Ok(metrics.loss)
            },
            |m| validation_loss(m, &valid),
            h.stop_rule(),
        )?;
        for (line, rec) in epoch_lines.iter().zip(&outcome.history) {
            log.line(format!("{line} valid_loss={:.6}", rec.valid_loss))?;
        }
        log.line(format!(
            "task={t} stopped epochs={} best_epoch={} best_valid_loss={:.6}",
            outcome.history.len(),
            outcome.best_epoch,
            outcome.best_loss
        ))?;

        match cfg.condition {
            Condition::PseudoRec => {
                let (generator, discriminator) = gan.as_mut().expect("gan exists for pseudo_rec");
                let previous = (t > 0).then(|| generator.clone());
                let real = task.images_at(&task.train);
                let set = build_gan_rehearsal_set(
                    previous.as_ref(),
                    &real,
                    profile.gan_size(),
                    h.gan_rehearsal_size,
                    seed::derive(task_seed, &[seed::tag("gan-set")]),
                )?;
                let n_real = if t == 0 { set.shape()[0] } else { h.gan_rehearsal_size / 2 };
                log.line(format!(
                    "task={t} gan_rehearsal total={} real={n_real} generated={}",
                    set.shape()[0],
                    set.shape()[0] - n_real
                ))?;
                let report = train_gan(
                    generator,
                    discriminator,
                    &set,
                    &h.gan,
                    seed::derive(task_seed, &[seed::tag("gan")]),
                    |_, _| Ok(()),
                )?;
                let last = report.d_loss.len() - 1;
                log.line(format!(
                    "task={t} gan epochs={} d_loss={:.4} g_loss={:.4} d_accuracy={:.4}",
                    report.d_loss.len(),
                    report.d_loss[last],
                    report.g_loss[last],
                    report.d_accuracy[last]
                ))?;
                let frozen = FrozenClassifier::new(&classifier);
                let p = build_pseudo_dataset(
                    generator,
                    &frozen,
                    [h.pseudo_train, h.pseudo_valid],
                    seed::derive(task_seed, &[seed::tag("pseudo")]),
                )?;
                log_pseudo(&mut log, t, &p, classes)?;
                if cfg.grids {
                    fs::create_dir_all(&grid_dir).map_err(|e| Error::io(&grid_dir, e))?;
                    let samples = generate_pseudo_images(generator, GRID_SIDE * GRID_SIDE, seed::derive(seed, &[seed::tag("grid")]))?;
                    emit_image_grid(&samples, GRID_SIDE, GRID_SIDE, &grid_dir.join(format!("task{t}.png")))?;
                }
                pseudo = Some(p);
            }
            Condition::PseudoRand => {
                let frozen = FrozenClassifier::new(&classifier);
                let p = build_uniform_noise_pseudo(
                    &frozen,
                    task.image_shape(),
                    [h.pseudo_train, h.pseudo_valid],
                    seed::derive(task_seed, &[seed::tag("pseudo")]),
                )?;
                log_pseudo(&mut log, t, &p, classes)?;
                pseudo = Some(p);
            }
            Condition::Ewc | Condition::EwcC10 => {
                let lambda = if cfg.condition == Condition::Ewc {
                    h.lambda_ewc
                } else {
                    h.lambda_ewc_c10
                };
                let x = preprocess_eval_batch(&task.images_at(&task.train), crop);
                let f = fisher_diagonal(&classifier, &x, h.fisher_samples, task_seed)?;
                fisher.push(FisherState::new(f, classifier.params().to_vec(), lambda)?);
                log.line(format!(
                    "task={t} fisher samples={} lambda={lambda} anchors={}",
                    h.fisher_samples.min(x.shape()[0]),
                    fisher.len()
                ))?;
            }
            Condition::RoteLearn => {
                let buf = refresh_rote_buffer(
                    &tasks[..=t],
                    &targets,
                    h.rote_buffer,
                    h.rote_train_fraction,
                    seed::derive(task_seed, &[seed::tag("rote")]),
                );
                log.line(format!(
                    "task={t} rote buffer={} train={} valid={}",
                    buf.groups.len(),
                    buf.train.len(),
                    buf.valid.len()
                ))?;
                rote = Some(buf);
            }
            Condition::Std | Condition::Reh => {}
        }

        let row = tasks[..=t]
            .iter()
            .map(|p| evaluate_accuracy(&classifier, p, head))
            .collect::<Result<Vec<_>>>()?;
        for (k, acc) in row.iter().enumerate() {
            log.line(format!("eval trained_through={t} task={k} accuracy={acc:.4}"))?;
        }
        matrix.push(row);

        persist_state(
            &ckpt_dir,
            cfg,
            seed,
            t,
            kind,
            &classifier,
            &outcome,
            gan.as_ref(),
            pseudo.as_ref(),
            rote.as_ref(),
            &fisher,
        )?;
        log.line(format!("task={t} persisted_bytes={}", dir_size(&ckpt_dir)?))?;
    }
    Ok(matrix)
}

fn log_pseudo(log: &mut RunLog, t: usize, p: &PseudoDataset, classes: usize) -> Result<()> {
    let width = p.soft_targets.shape()[1];
    let mut per_task = vec![0usize; width.div_ceil(classes)];
    p.hard_labels.iter().for_each(|&l| per_task[l / classes] += 1);
    log.line(format!(
        "task={t} pseudo train={} valid={} argmax_per_task={per_task:?}",
        p.train.len(),
        p.valid.len()
    ))
}

#[allow(clippy::too_many_arguments)]
fn persist_state(
    dir: &Path,
    cfg: &ExperimentConfig,
    seed: u64,
    t: usize,
    kind: ModelKind,
    classifier: &Model,
    outcome: &crate::trainer::EarlyStopOutcome,
    gan: Option<&(Model, Model)>,
    pseudo: Option<&PseudoDataset>,
    rote: Option<&RoteBuffer>,
    fisher: &[FisherState],
) -> Result<()> {
    let ckpt = |kind, model: &Model, epoch, loss| ModelCheckpoint {
        kind,
        profile: cfg.profile,
        model: model.clone(),
        optimizer: None,
        task_index: t,
        epoch,
        validation_loss: loss,
        seed,
    };
    save_checkpoint(
        &ckpt(kind, classifier, outcome.best_epoch, outcome.best_loss),
        &dir.join("classifier.prcl"),
    )?;
    if let Some((g, d)) = gan {
        save_checkpoint(&ckpt(ModelKind::Generator, g, cfg.hyper.gan.epochs, 0.0), &dir.join("generator.prcl"))?;
        save_checkpoint(&ckpt(ModelKind::Discriminator, d, cfg.hyper.gan.epochs, 0.0), &dir.join("discriminator.prcl"))?;
    }
    let meta = vec![("task_index".to_string(), t.to_string()), ("seed".to_string(), seed.to_string())];
    if let Some(p) = pseudo {
        RawCheckpoint {
            meta: meta.clone(),
            tensors: vec![
                ("images".into(), p.images.clone()),
                ("soft_targets".into(), p.soft_targets.clone()),
            ],
        }
        .save(&dir.join("pseudo.prcl"))?;
    }
    if let Some(b) = rote {
        RawCheckpoint {
            meta: meta.clone(),
            tensors: vec![("images".into(), b.images.clone()), ("targets".into(), b.targets.clone())],
        }
        .save(&dir.join("rote.prcl"))?;
    }
    if !fisher.is_empty() {
        let mut tensors = Vec::new();
        for (k, f) in fisher.iter().enumerate() {
            for (j, (imp, anchor)) in f.fisher.iter().zip(&f.anchor).enumerate() {
                tensors.push((format!("task{k}.fisher.{j}"), imp.clone()));
                tensors.push((format!("task{k}.anchor.{j}"), anchor.clone()));
            }
        }
        RawCheckpoint { meta, tensors }.save(&dir.join("ewc.prcl"))?;
    }
    Ok(())
}

/// Runs every seed, writing per-seed results as they finish and the
/// aggregated `metrics.csv` (plus summary) for the condition.
pub fn run_condition(cfg: &ExperimentConfig) -> Result<ConditionReport> {
    cfg.validate()?;
    let mut report = ConditionReport {
        condition: cfg.condition.name().to_string(),
        seeds: Vec::new(),
        matrices: Vec::new(),
    };
    for &seed in &cfg.seeds {
        let dir = cfg.seed_dir(seed);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let matrix = sequential_task_loop(cfg, seed, &dir)?;
        let single = ConditionReport {
            condition: report.condition.clone(),
            seeds: vec![seed],
            matrices: vec![matrix.clone()],
        };
        emit_metrics_csv(&single, &dir.join("metrics.csv"))?;
        report.seeds.push(seed);
        report.matrices.push(matrix);
    }
    emit_metrics_csv(&report, &cfg.condition_dir().join("metrics.csv"))?;
    Ok(report)
}

/// Writes the protocol lines to `<out>/<condition>/protocol.txt` without
/// training. Task data is not needed.
pub fn dry_run(cfg: &ExperimentConfig) -> Result<Vec<String>> {
    cfg.validate_hyper()?;
    let lines = protocol_lines(cfg)?;
    let dir = cfg.condition_dir();
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let path = dir.join("protocol.txt");
    fs::write(&path, lines.join("\n") + "\n").map_err(|e| Error::io(&path, e))?;
    Ok(lines)
}

/// Re-aggregates the per-seed `metrics.csv` files under a condition
/// directory, in ascending seed order.
pub fn aggregate_condition(condition_dir: &Path) -> Result<ConditionReport> {
    let mut seeds: Vec<(u64, PathBuf)> = Vec::new();
    for entry in fs::read_dir(condition_dir).map_err(|e| Error::io(condition_dir, e))? {
        let entry = entry.map_err(|e| Error::io(condition_dir, e))?;
        let path = entry.path().join("metrics.csv");
        if let (Some(seed), true) = (entry.file_name().to_str().and_then(|s| s.parse().ok()), path.exists()) {
            seeds.push((seed, path));
        }
    }
    if seeds.is_empty() {
        return Err(Error::Config(format!("no per-seed results under {}", condition_dir.display())));
    }
    seeds.sort();
    let mut report = ConditionReport {
        condition: String::new(),
        seeds: Vec::new(),
        matrices: Vec::new(),
    };
    for (_, path) in seeds {
        let r = read_metrics_csv(&path)?;
        report.condition = r.condition;
        report.seeds.extend(r.seeds);
        report.matrices.extend(r.matrices);
    }
    emit_metrics_csv(&report, &condition_dir.join("metrics.csv"))?;
    Ok(report)
}
