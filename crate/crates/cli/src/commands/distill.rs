use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use kdlens::data::{Dataset, Split};
use kdlens::distill::{distill, DistillConfig, LogitsTable, Teacher, TrainReport};
use kdlens::evaluate::{classification_metrics, MetricsReport};
use kdlens::models::{build_student_spec, encode_model, Model, ModelSpec};
use kdlens::{Error, Result};
use serde_json::{json, Value};

use super::{check_model_fits, load_dataset, open_model};
use crate::config::RunConfig;
use crate::run::Run;

/// Teacher flag overrides, already merged into `cfg.teacher` by the caller.
fn teacher_logits(cfg: &RunConfig, ds: &Dataset) -> Result<LogitsTable> {
    match (&cfg.teacher.model, &cfg.teacher.logits) {
        (Some(path), _) => {
            let teacher = open_model(Some(path), "teacher model")?;
            check_model_fits(&teacher, ds, "teacher")?;
            // frozen and deterministic: computing once equals per-cell evaluation
            LogitsTable::from_model(&teacher, ds, &ds.indices(Split::Train))
        }
        (None, Some(path)) => {
            if !path.is_file() {
                return Err(Error::Config(format!("teacher logits {} does not exist", path.display())));
            }
            LogitsTable::read_csv(path)
        }
        (None, None) => Err(Error::Config(
            "distill needs a teacher: set teacher.model or teacher.logits (or --teacher / --logits)".into(),
        )),
    }
}

/// Compact parameter text for file names: 0.7 → `0.7`, 10.0 → `10`.
pub fn cell_tag(alpha: f64, temperature: f64) -> String {
    format!("a{alpha}_t{temperature}")
}

struct Cell {
    config: DistillConfig,
    model: Model,
    report: TrainReport,
    metrics: MetricsReport,
}

fn run_cell(table: &LogitsTable, spec: &ModelSpec, ds: &Dataset, eval: Split, config: DistillConfig) -> Result<Cell> {
    let (model, report) = distill(Teacher::Logits(table), spec, ds, &config)?;
    let metrics = classification_metrics(&model, ds, eval)?;
    Ok(Cell {
        config,
        model,
        report,
        metrics,
    })
}

/// Index of the best cell: highest accuracy, ties to lower loss, then the
/// earlier cell.
pub fn best_cell(scores: &[(f64, f64)]) -> Option<usize> {
    (0..scores.len()).reduce(|best, i| {
        let (a, l) = scores[i];
        let (ba, bl) = scores[best];
        if a > ba || (a == ba && l < bl) {
            i
        } else {
            best
        }
    })
}

pub fn grid(cfg: &RunConfig, run: &mut Run) -> Result<Value> {
    let ds = load_dataset(cfg)?;
    let table = teacher_logits(cfg, &ds)?;
    let shape = ds
        .image_shape()
        .ok_or_else(|| Error::Data("dataset is empty".into()))?;
    let spec = build_student_spec(shape, ds.num_classes())?;
    let eval = if ds.indices(Split::Test).is_empty() { Split::Val } else { Split::Test };

    let d = &cfg.distill;
    let configs: Vec<DistillConfig> = d
        .alphas
        .iter()
        .flat_map(|&alpha| {
            d.temperatures.iter().map(move |&temperature| DistillConfig {
                alpha,
                temperature,
                soft_mode: d.soft_mode,
                epochs: d.epochs,
                batch_size: d.batch_size,
                learning_rate: d.learning_rate,
                seed: cfg.seed,
            })
        })
        .collect();
    for c in &configs {
        c.validate()?;
    }

    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<Cell>>>> = Mutex::new((0..configs.len()).map(|_| None).collect());
    let workers = d.jobs.min(configs.len());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(config) = configs.get(i) else { break };
                let cell = run_cell(&table, &spec, &ds, eval, *config);
                results.lock().expect("no worker panicked")[i] = Some(cell);
            });
        }
    });
    let cells = results
        .into_inner()
        .expect("no worker panicked")
        .into_iter()
        .map(|c| c.expect("every cell ran"))
        .collect::<Result<Vec<Cell>>>()?;

    let scores: Vec<(f64, f64)> = cells.iter().map(|c| (c.metrics.accuracy, c.metrics.mean_loss)).collect();
    let best = best_cell(&scores).expect("grid is non-empty");
    let mut csv = csv::Writer::from_writer(Vec::new());
    csv.write_record([
        "alpha",
        "temperature",
        "soft_mode",
        "split",
        "accuracy",
        "loss",
        "macro_f1",
        "best_epoch",
        "val_accuracy",
        "model",
        "best",
    ])?;
    for (i, cell) in cells.iter().enumerate() {
        let c = &cell.config;
        let tag = cell_tag(c.alpha, c.temperature);
        let model_file = format!("student_{tag}.kdfm");
        run.write(&model_file, encode_model(&cell.model))?;
        run.write(&format!("report_{tag}.csv"), cell.report.to_csv()?)?;
        let soft_mode = serde_json::to_value(c.soft_mode)?;
        csv.write_record([
            c.alpha.to_string(),
            c.temperature.to_string(),
            soft_mode.as_str().unwrap_or_default().to_string(),
            eval.as_str().to_string(),
            format!("{:.6}", cell.metrics.accuracy),
            format!("{:.6}", cell.metrics.mean_loss),
            format!("{:.6}", cell.metrics.macro_f1),
            cell.report.best().epoch.to_string(),
            format!("{:.6}", cell.report.best().val_accuracy),
            model_file,
            u8::from(i == best).to_string(),
        ])?;
    }
    let csv = csv.into_inner().map_err(|e| Error::Data(e.to_string()))?;
    run.write("grid.csv", csv)?;
    run.write("split.json", ds.split_manifest_json() + "\n")?;

    let b = &cells[best];
    Ok(json!({
        "cells": cells.len(),
        "best_alpha": b.config.alpha,
        "best_temperature": b.config.temperature,
        "best_accuracy": b.metrics.accuracy,
        "best_loss": b.metrics.mean_loss,
        "best_macro_f1": b.metrics.macro_f1,
        "split": eval.as_str(),
        "teacher": teacher_source(cfg),
    }))
}

fn teacher_source(cfg: &RunConfig) -> Value {
    let show = |p: &Path| Value::String(p.display().to_string());
    cfg.teacher
        .model
        .as_deref()
        .map(show)
        .or_else(|| cfg.teacher.logits.as_deref().map(show))
        .unwrap_or(Value::Null)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn best_cell_rule() {
        assert_eq!(best_cell(&[(0.9, 0.3), (0.95, 0.5), (0.95, 0.4), (0.95, 0.4)]), Some(2));
        assert_eq!(best_cell(&[(0.5, 0.1)]), Some(0));
        assert_eq!(best_cell(&[]), None);
    }

    #[test]
    fn tags() {
        assert_eq!(cell_tag(0.7, 10.0), "a0.7_t10");
        assert_eq!(cell_tag(0.4, 2.5), "a0.4_t2.5");
    }
}
