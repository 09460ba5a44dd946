use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use metacs::algo::AlgoMethod;
use metacs::eval::{
    ablation_grid, collect_summaries, evaluate_model, prepare_tasks, ratio_sweep, render_report,
    report_rows, restore_model, run_on_tasks, run_stem, save_training, train_model, write_report,
    ExperimentConfig, Fitted, ModelName,
};
use metacs::task::{Scenario, TaskSet};

const SEED_ENV: &str = "META_CS_SEED";

#[derive(Parser, Debug)]
#[command(
    name = "metacs",
    version,
    about = "Meta-learned community search: task preparation, training, evaluation and reports",
    arg_required_else_help = true
)]
struct Cli {
    /// TOML experiment configuration.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Master seed (overridden by META_CS_SEED).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_parser = ["sgsc", "sgdc", "mgod", "mgdd"])]
    scenario: Option<String>,
    #[arg(long, global = true, value_parser = ["1", "5"])]
    shots: Option<String>,
    /// cgnp-ip, cgnp-mlp, cgnp-gnn, supervised, feattrans, maml, reptile, gpn, ctc or kcore.
    #[arg(long, global = true)]
    model: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build the train/valid/test tasks and write them to <out>/tasks.
    PrepareTasks,
    /// Train the model and write its checkpoint to <out>.
    Train,
    /// Evaluate a trained model on the test tasks and write the per-query CSV.
    Evaluate {
        /// Checkpoint to load (default: <out>/<model>_<scenario>_<shots>shot.ckpt).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// F1 against the number of support labels.
    SweepRatio,
    /// Encoder and commutative-operation sweeps of a CGNP model.
    Ablate,
    /// Run an algorithmic baseline (ctc or kcore) on the test tasks.
    Baseline {
        #[arg(long, default_value = "ctc")]
        method: String,
    },
    /// Aggregate run summaries into a comparison table.
    Report {
        /// Directories holding run summaries (default: <out>).
        dirs: Vec<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::from_file(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.set_seed(seed);
    }
    if let Ok(raw) = std::env::var(SEED_ENV) {
        let seed: u64 = raw
            .trim()
            .parse()
            .with_context(|| format!("{SEED_ENV}={raw:?} is not an unsigned integer"))?;
        cfg.set_seed(seed);
    }
    if let Some(out) = &cli.out {
        cfg.out = out.clone();
    }
    if let Some(s) = &cli.scenario {
        cfg.scenario.scenario = s.parse::<Scenario>()?;
    }
    if let Some(k) = &cli.shots {
        cfg.scenario.shots = k.parse().expect("clap restricts shots to 1 or 5");
    }
    if let Some(m) = &cli.model {
        cfg.model = m.parse::<ModelName>()?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn tasks_dir(cfg: &ExperimentConfig) -> PathBuf {
    cfg.out.join("tasks")
}

/// The configured task directory, else tasks prepared under `<out>`, else a fresh build.
fn obtain_tasks(cfg: &ExperimentConfig) -> Result<TaskSet> {
    if cfg.tasks.is_none() && tasks_dir(cfg).is_dir() {
        return Ok(TaskSet::load(&tasks_dir(cfg))?);
    }
    Ok(prepare_tasks(cfg)?)
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = load_config(&cli)?;
    match &cli.command {
        Command::PrepareTasks => {
            let tasks = prepare_tasks(&cfg)?;
            let dir = tasks_dir(&cfg);
            tasks.save(&dir)?;
            println!(
                "wrote {} train, {} valid, {} test tasks to {} (digest {})",
                tasks.train.len(),
                tasks.valid.len(),
                tasks.test.len(),
                dir.display(),
                tasks.digest()?
            );
        }
        Command::Train => {
            let tasks = obtain_tasks(&cfg)?;
            let training = train_model(&cfg, cfg.model, &tasks)?;
            match save_training(&cfg, &training, &cfg.out)? {
                Some(path) => println!("trained {} in {:.1}s, checkpoint {}", cfg.model, training.seconds, path.display()),
                None => println!("{} has no meta-training stage; nothing to save", cfg.model),
            }
        }
        Command::Evaluate { checkpoint } => {
            let tasks = obtain_tasks(&cfg)?;
            let fitted = if cfg.model.decoder().is_some() || matches!(cfg.model.baseline(), Some(b) if b != metacs::baselines::BaselineKind::Supervised) {
                let path = checkpoint
                    .clone()
                    .unwrap_or_else(|| cfg.out.join(format!("{}.ckpt", run_stem(&cfg, cfg.model))));
                if !path.exists() {
                    bail!("no checkpoint at {}; run `train` first or pass --checkpoint", path.display());
                }
                restore_model(&cfg, cfg.model, &tasks, &path)?
            } else {
                Fitted::new(&cfg, cfg.model, feature_dim(&tasks)?)?
            };
            let table = evaluate_model(&cfg, cfg.model, &fitted, &tasks, Some(&cfg.out))?;
            table.write_summary(&cfg.out)?;
            print_metrics(&table.stem(), &table.mean);
        }
        Command::SweepRatio => {
            let tasks = obtain_tasks(&cfg)?;
            let rows = ratio_sweep(&cfg, &tasks, Some(&cfg.out))?;
            for r in &rows {
                println!("{:<11} {:>5}%/{:>5}%  f1={:.4}", r.model.as_str(), r.pos_pct, r.neg_pct, r.f1);
            }
            println!("wrote {}", cfg.out.join("ratio_sweep.csv").display());
        }
        Command::Ablate => {
            let tasks = obtain_tasks(&cfg)?;
            let rows = ablation_grid(&cfg, &tasks, Some(&cfg.out))?;
            for r in &rows {
                println!("{:<8} encoder={:<5} combine={:<10} f1={:.4}", r.sweep, r.encoder.to_string(), r.combine.to_string(), r.f1);
            }
            println!("wrote {}", cfg.out.join("ablation.csv").display());
        }
        Command::Baseline { method } => {
            let method: AlgoMethod = method.parse()?;
            cfg.model = match method {
                AlgoMethod::Ctc => ModelName::Ctc,
                AlgoMethod::Kcore => ModelName::Kcore,
            };
            let tasks = obtain_tasks(&cfg)?;
            let table = run_on_tasks(&cfg, cfg.model, &tasks, Some(&cfg.out))?;
            print_metrics(&table.stem(), &table.mean);
        }
        Command::Report { dirs } => {
            let dirs: Vec<&Path> = if dirs.is_empty() {
                vec![cfg.out.as_path()]
            } else {
                dirs.iter().map(PathBuf::as_path).collect()
            };
            let rows = report_rows(&collect_summaries(&dirs)?);
            if rows.is_empty() {
                bail!("no run summaries found");
            }
            print!("{}", render_report(&rows));
            let path = cfg.out.join("report.csv");
            std::fs::create_dir_all(&cfg.out).with_context(|| format!("creating {}", cfg.out.display()))?;
            write_report(&rows, &path)?;
            println!("wrote {}", path.display());
        }
    }
    Ok(())
}

fn feature_dim(tasks: &TaskSet) -> Result<usize> {
    tasks
        .test
        .first()
        .or(tasks.train.first())
        .map(|t| t.feature_dim())
        .context("empty task set")
}

fn print_metrics(stem: &str, m: &metacs::eval::Metrics) {
    println!(
        "{stem}: acc={:.4} pre={:.4} rec={:.4} f1={:.4}",
        m.acc, m.pre, m.rec, m.f1
    );
}
