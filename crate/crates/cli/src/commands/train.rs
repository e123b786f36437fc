use kdlens::data::Split;
use kdlens::distill::{train_teacher, TrainConfig};
use kdlens::evaluate::classification_metrics;
use kdlens::models::{build_teacher_spec, count_flops, encode_model};
use kdlens::{Error, Result};
use serde_json::{json, Value};

use super::load_dataset;
use crate::config::RunConfig;
use crate::run::Run;

pub const TEACHER_FILE: &str = "teacher.kdfm";

pub fn teacher(cfg: &RunConfig, run: &mut Run) -> Result<Value> {
    let ds = load_dataset(cfg)?;
    let shape = ds
        .image_shape()
        .ok_or_else(|| Error::Data("dataset is empty".into()))?;
    let spec = build_teacher_spec(shape, ds.num_classes(), cfg.teacher.depth)?;
    let tc = TrainConfig {
        epochs: cfg.teacher.epochs,
        batch_size: cfg.teacher.batch_size,
        learning_rate: cfg.teacher.learning_rate,
        seed: cfg.seed,
    };
    let (model, report) = train_teacher(&spec, &ds, &tc)?;
    run.write(TEACHER_FILE, encode_model(&model))?;
    run.write("train_report.csv", report.to_csv()?)?;
    run.write("split.json", ds.split_manifest_json() + "\n")?;

    let last = report.epochs.last().expect("at least one epoch");
    let best = report.best();
    let test_accuracy = if ds.indices(Split::Test).is_empty() {
        Value::Null
    } else {
        json!(classification_metrics(&model, &ds, Split::Test)?.accuracy)
    };
    Ok(json!({
        "final_val_accuracy": last.val_accuracy,
        "best_epoch": best.epoch,
        "best_val_accuracy": best.val_accuracy,
        "best_val_loss": best.val_loss,
        "test_accuracy": test_accuracy,
        "parameters": spec.param_count()?,
        "flops": count_flops(&spec)?.total,
        "wall_clock_seconds": report.wall_clock_seconds,
    }))
}
