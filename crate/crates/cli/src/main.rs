//! `kdlens`: synthetic data, teacher training, distillation grids,
//! explanations and evaluation, each written to its own run directory.

mod commands;
mod config;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use kdlens::data::Split;
use kdlens::distill::SoftMode;
use kdlens::evaluate::FidelityMethod;
use kdlens::{Error, Result};

use crate::config::{DatasetSource, ExplainMethod, RunConfig};
use crate::run::{output_root, Run};

#[derive(Parser, Debug)]
#[command(name = "kdlens", version, about)]
struct Cli {
    /// TOML run configuration; every key is optional.
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,
    /// Root seed for every random stream.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output root (default: config output_dir, then $KDLENS_OUT, then ./runs).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Dataset utilities.
    #[command(subcommand)]
    Dataset(DatasetCommand),
    /// Train the teacher network.
    TrainTeacher(TrainArgs),
    /// Distil the teacher into students over an alpha × temperature grid.
    Distill(DistillArgs),
    /// Render attribution overlays with JSON sidecars.
    Explain(ExplainArgs),
    /// Metrics, confusion matrices, decision curves, fidelity and efficiency.
    Evaluate(EvaluateArgs),
    /// Write teacher logits for the train and val samples as CSV.
    ExportLogits(TeacherArg),
}

#[derive(Subcommand, Debug)]
enum DatasetCommand {
    /// Write the synthetic quadrant dataset as PNGs with labels and splits.
    Synth(SynthArgs),
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long)]
    samples_per_class: Option<usize>,
    #[arg(long)]
    image_size: Option<usize>,
    #[arg(long)]
    noise_sigma: Option<f64>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    depth: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
}

#[derive(Args, Debug)]
struct TeacherArg {
    /// Teacher model file.
    #[arg(long)]
    teacher: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct DistillArgs {
    /// Teacher model file.
    #[arg(long, conflicts_with = "logits")]
    teacher: Option<PathBuf>,
    /// Teacher logits CSV instead of a model.
    #[arg(long)]
    logits: Option<PathBuf>,
    /// Repeat or comma-separate for a grid.
    #[arg(long, value_delimiter = ',')]
    alpha: Vec<f64>,
    #[arg(long, value_delimiter = ',')]
    temperature: Vec<f64>,
    #[arg(long, value_parser = parse_soft_mode)]
    soft_mode: Option<SoftMode>,
    /// Grid cells trained in parallel.
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
}

#[derive(Args, Debug)]
struct ExplainArgs {
    #[arg(long)]
    model: Option<PathBuf>,
    /// PNG file to explain; repeatable. Overrides dataset selection.
    #[arg(long)]
    image: Vec<PathBuf>,
    /// Dataset sample id; repeatable.
    #[arg(long)]
    id: Vec<String>,
    #[arg(long, value_parser = parse_split)]
    split: Option<Split>,
    /// Number of samples taken from the split when no ids are given.
    #[arg(long)]
    count: Option<usize>,
    #[arg(long, value_enum, value_delimiter = ',')]
    method: Vec<ExplainMethod>,
    #[arg(long)]
    patch_size: Option<usize>,
    #[arg(long)]
    permutations: Option<usize>,
    #[arg(long)]
    alpha_blend: Option<f64>,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    #[arg(long)]
    student: Option<PathBuf>,
    #[arg(long)]
    teacher: Option<PathBuf>,
    #[arg(long, value_parser = parse_split)]
    split: Option<Split>,
    /// FGSM step size; repeat or comma-separate for a sweep.
    #[arg(long, value_delimiter = ',')]
    epsilon: Vec<f64>,
    #[arg(long)]
    quantile: Option<f64>,
    #[arg(long, value_delimiter = ',', value_parser = parse_fidelity)]
    fidelity_method: Vec<FidelityMethod>,
    #[arg(long)]
    fidelity_limit: Option<usize>,
    #[arg(long)]
    positive_class: Option<usize>,
    #[arg(long)]
    warmup: Option<usize>,
    #[arg(long)]
    runs: Option<usize>,
    /// Skip the timing measurements.
    #[arg(long)]
    no_efficiency: bool,
}

fn parse_soft_mode(s: &str) -> std::result::Result<SoftMode, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_split(s: &str) -> std::result::Result<Split, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_fidelity(s: &str) -> std::result::Result<FidelityMethod, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn set_vec<T>(slot: &mut Vec<T>, values: Vec<T>) {
    if !values.is_empty() {
        *slot = values;
    }
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Dataset(DatasetCommand::Synth(_)) => "dataset-synth",
            Command::TrainTeacher(_) => "train-teacher",
            Command::Distill(_) => "distill",
            Command::Explain(_) => "explain",
            Command::Evaluate(_) => "evaluate",
            Command::ExportLogits(_) => "export-logits",
        }
    }

    /// Folds the subcommand's flags into `cfg`.
    fn apply(self, cfg: &mut RunConfig) {
        match self {
            Command::Dataset(DatasetCommand::Synth(a)) => {
                if let DatasetSource::Synth(p) = &mut cfg.dataset {
                    set(&mut p.samples_per_class, a.samples_per_class);
                    set(&mut p.image_size, a.image_size);
                    set(&mut p.noise_sigma, a.noise_sigma);
                }
            }
            Command::TrainTeacher(a) => {
                let t = &mut cfg.teacher;
                set(&mut t.depth, a.depth);
                set(&mut t.epochs, a.epochs);
                set(&mut t.batch_size, a.batch_size);
                set(&mut t.learning_rate, a.learning_rate);
            }
            Command::Distill(a) => {
                if a.teacher.is_some() {
                    cfg.teacher.model = a.teacher;
                    cfg.teacher.logits = None;
                } else if a.logits.is_some() {
                    cfg.teacher.logits = a.logits;
                    cfg.teacher.model = None;
                }
                let d = &mut cfg.distill;
                set_vec(&mut d.alphas, a.alpha);
                set_vec(&mut d.temperatures, a.temperature);
                set(&mut d.soft_mode, a.soft_mode);
                set(&mut d.jobs, a.jobs);
                set(&mut d.epochs, a.epochs);
                set(&mut d.batch_size, a.batch_size);
                set(&mut d.learning_rate, a.learning_rate);
            }
            Command::Explain(a) => {
                let x = &mut cfg.explain;
                if a.model.is_some() {
                    x.model = a.model;
                }
                set_vec(&mut x.images, a.image);
                set_vec(&mut x.ids, a.id);
                set(&mut x.split, a.split);
                set(&mut x.count, a.count);
                set_vec(&mut x.methods, a.method);
                set(&mut x.patch_size, a.patch_size);
                set(&mut x.permutations, a.permutations);
                set(&mut x.alpha_blend, a.alpha_blend);
            }
            Command::Evaluate(a) => {
                if a.teacher.is_some() {
                    cfg.teacher.model = a.teacher;
                }
                let e = &mut cfg.evaluate;
                if a.student.is_some() {
                    e.student = a.student;
                }
                set(&mut e.split, a.split);
                set_vec(&mut e.epsilons, a.epsilon);
                set(&mut e.quantile, a.quantile);
                set_vec(&mut e.fidelity_methods, a.fidelity_method);
                if a.fidelity_limit.is_some() {
                    e.fidelity_limit = a.fidelity_limit;
                }
                set(&mut e.positive_class, a.positive_class);
                set(&mut e.warmup, a.warmup);
                set(&mut e.runs, a.runs);
                if a.no_efficiency {
                    e.efficiency = false;
                }
            }
            Command::ExportLogits(a) => {
                if a.teacher.is_some() {
                    cfg.teacher.model = a.teacher;
                }
            }
        }
    }
}

/// 2 configuration or usage, 3 data or parse, 4 internal, 5 I/O.
fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config(_) | Error::Usage(_) => 2,
        Error::Data(_) | Error::Parse { .. } | Error::Image { .. } | Error::Csv(_) | Error::Json(_) => 3,
        Error::Shape(_) | Error::Domain(_) => 4,
        Error::Io { .. } => 5,
    }
}

fn execute(cli: Cli) -> Result<PathBuf> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    set(&mut cfg.seed, cli.seed);
    let name = cli.command.name();
    let is_synth = matches!(cli.command, Command::Dataset(_));
    cli.command.apply(&mut cfg);
    cfg.validate()?;
    let root = output_root(cli.out.as_deref(), &cfg);
    let mut run = Run::create(&root, name)?;
    let dir = run.dir.clone();
    let result = run_command(name, is_synth, &cfg, &mut run).and_then(|headline| {
        run.finish(&cfg, headline.clone())?;
        Ok(headline)
    });
    let headline = match result {
        Ok(h) => h,
        Err(e) => {
            // a failed run leaves nothing behind
            let _ = std::fs::remove_dir_all(&dir);
            return Err(e);
        }
    };
    println!("{}", serde_json::to_string_pretty(&headline)?);
    Ok(dir)
}

fn run_command(name: &str, is_synth: bool, cfg: &RunConfig, run: &mut Run) -> Result<serde_json::Value> {
    run.write("config.toml", cfg.to_toml())?;
    Ok(match name {
        _ if is_synth => commands::dataset::synth(cfg, run)?,
        "train-teacher" => commands::train::teacher(cfg, run)?,
        "distill" => commands::distill::grid(cfg, run)?,
        "explain" => commands::explain::explain(cfg, run)?,
        "evaluate" => commands::evaluate::evaluate(cfg, run)?,
        "export-logits" => commands::logits::export(cfg, run)?,
        other => unreachable!("unhandled command {other}"),
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(dir) => {
            println!("run: {}", dir.display());
            ExitCode::SUCCESS
        }
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}
