use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use pseudorec::checks::oracle_suite;
use pseudorec::harness::{aggregate_condition, dry_run, run_condition, summary_path, Condition, ExperimentConfig};
use pseudorec::nn::ModelKind;
use pseudorec::replay::generate_pseudo_images;
use pseudorec::trainer::load_checkpoint;
use pseudorec::{Error, Result};

#[derive(Parser)]
#[command(name = "pseudorec", version, about = "Continual learning with pseudo-recursal and baselines")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one condition over the task sequence for every seed.
    Run(RunArgs),
    /// Re-aggregate per-seed metrics.csv files into condition summaries.
    Report {
        /// A condition directory (`out/<condition>`) or an output root
        /// holding several of them.
        dir: PathBuf,
    },
    /// Sample a trained generator checkpoint into a PNG grid.
    GenGrid {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 8)]
        rows: usize,
        #[arg(long, default_value_t = 8)]
        cols: usize,
    },
    /// Run the gradient, loss-identity and layer-oracle suite.
    Check {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Random instances per layer oracle.
        #[arg(long, default_value_t = 100)]
        cases: usize,
        /// Elements sampled per parameter tensor in the gradient checks
        /// (0 checks every element).
        #[arg(long, default_value_t = 256)]
        per_param: usize,
    },
}

#[derive(clap::Args)]
struct RunArgs {
    /// Key-value config file; flags override its entries.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    condition: Option<String>,
    #[arg(long)]
    profile: Option<String>,
    #[arg(long, conflicts_with = "seeds")]
    seed: Option<u64>,
    /// Comma-separated seeds.
    #[arg(long)]
    seeds: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Extra `key=value` overrides, applied last.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Validate the config and write the protocol summary without training.
    #[arg(long)]
    dry_run: bool,
}

impl RunArgs {
    fn entries(&self) -> Result<Vec<(String, String)>> {
        let mut entries = match &self.config {
            Some(path) => ExperimentConfig::from_file(path)?,
            None => Vec::new(),
        };
        let mut push = |k: &str, v: String| entries.push((k.to_string(), v));
        if let Some(v) = &self.profile {
            push("profile", v.clone());
        }
        if let Some(v) = &self.condition {
            push("condition", v.clone());
        }
        if let Some(v) = self.seed {
            push("seed", v.to_string());
        }
        if let Some(v) = &self.seeds {
            push("seeds", v.clone());
        }
        if let Some(v) = &self.out {
            push("out", v.display().to_string());
        }
        for o in &self.overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override '{o}' is not key=value")))?;
            push(k.trim(), v.trim().to_string());
        }
        Ok(entries)
    }
}

fn run(args: &RunArgs) -> Result<()> {
    let cfg = ExperimentConfig::from_entries(&args.entries()?)?;
    if args.dry_run {
        for line in dry_run(&cfg)? {
            println!("{line}");
        }
        return Ok(());
    }
    cfg.validate()?;
    let report = run_condition(&cfg)?;
    let tasks = report.tasks();
    let row: Vec<String> = (0..tasks).map(|t| format!("{:.4}", report.mean(tasks - 1, t))).collect();
    println!("final accuracy per task (mean over seeds {:?}): {}", report.seeds, row.join(" "));
    println!("final previous-task accuracy: {:.4}", report.final_previous_accuracy());
    println!("metrics: {}", cfg.condition_dir().join("metrics.csv").display());
    Ok(())
}

fn report(dir: &Path) -> Result<()> {
    let is_condition = |d: &Path| d.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.parse::<Condition>().is_ok());
    let mut dirs = Vec::new();
    if is_condition(dir) {
        dirs.push(dir.to_path_buf());
    } else {
        let entries = std::fs::read_dir(dir).map_err(|e| Error::Config(format!("cannot read {}: {e}", dir.display())))?;
        for entry in entries.flatten() {
            if entry.path().is_dir() && is_condition(&entry.path()) {
                dirs.push(entry.path());
            }
        }
        dirs.sort();
    }
    if dirs.is_empty() {
        return Err(Error::Config(format!("no condition directories under {}", dir.display())));
    }
    for d in dirs {
        let r = aggregate_condition(&d)?;
        println!(
            "{}: seeds {:?}, final previous-task accuracy {:.4} -> {}",
            r.condition,
            r.seeds,
            r.final_previous_accuracy(),
            summary_path(&d.join("metrics.csv")).display()
        );
    }
    Ok(())
}

fn gen_grid(checkpoint: &Path, out: &Path, seed: u64, rows: usize, cols: usize) -> Result<()> {
    if rows == 0 || cols == 0 {
        return Err(Error::Config("rows and cols must be positive".into()));
    }
    let ckpt = load_checkpoint(checkpoint)?;
    if ckpt.kind != ModelKind::Generator {
        return Err(Error::Config(format!("{} holds a {}, not a generator", checkpoint.display(), ckpt.kind)));
    }
    let images = generate_pseudo_images(&ckpt.model, rows * cols, seed)?;
    pseudorec::harness::emit_image_grid(&images, rows, cols, out)?;
    println!("wrote {}", out.display());
    Ok(())
}

fn check(seed: u64, cases: usize, per_param: usize) -> Result<bool> {
    let outcomes = oracle_suite(seed, cases, (per_param > 0).then_some(per_param))?;
    for o in &outcomes {
        println!("{o}");
    }
    Ok(outcomes.iter().all(|o| o.passed))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(1);
        }
    };
    let result = match &cli.command {
        Command::Run(args) => run(args).map(|_| true),
        Command::Report { dir } => report(dir).map(|_| true),
        Command::GenGrid {
            checkpoint,
            out,
            seed,
            rows,
            cols,
        } => gen_grid(checkpoint, out, *seed, *rows, *cols).map(|_| true),
        Command::Check { seed, cases, per_param } => check(*seed, *cases, *per_param),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config() { 1 } else { 2 })
        }
    }
}
