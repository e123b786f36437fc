use std::collections::BTreeMap;

use kdlens::data::{Dataset, Split};
use kdlens::evaluate::{
    classification_metrics, decision_curve, decision_curve_csv, efficiency_csv, efficiency_report, fidelity_score,
    fidelity_table_csv, flops_csv, render_confusion, EfficiencyConfig, FidelityConfig, FidelityResult,
};
use kdlens::explain::encode_png;
use kdlens::models::{count_flops, Model};
use kdlens::{Error, Result};
use serde_json::{json, Value};

use super::{check_model_fits, load_dataset, open_model};
use crate::config::RunConfig;
use crate::run::Run;

/// Copy of `ds` whose `split` keeps only its first `limit` samples.
fn truncate_split(ds: &Dataset, split: Split, limit: usize) -> Dataset {
    let mut out = ds.clone();
    for i in ds.indices(split).into_iter().skip(limit) {
        out.split_assignment.remove(&ds.samples[i].id);
    }
    out
}

fn fidelity_samples_csv(results: &[FidelityResult]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["method", "epsilon", "sample_id", "label", "correct", "c_orig", "c_adv", "ratio"])?;
    for r in results {
        for s in &r.samples {
            w.write_record([
                r.method.as_str().to_string(),
                format!("{:.6}", r.epsilon),
                s.id.clone(),
                s.label.to_string(),
                u8::from(s.correct).to_string(),
                format!("{:.9}", s.c_orig),
                format!("{:.9}", s.c_adv),
                format!("{:.9}", s.ratio),
            ])?;
        }
    }
    String::from_utf8(w.into_inner().map_err(|e| Error::Data(e.to_string()))?).map_err(|e| Error::Data(e.to_string()))
}

/// Metrics, confusion matrix, decision curve and fidelity table for each
/// model, then FLOPs and explanation timing across models.
pub fn evaluate(cfg: &RunConfig, run: &mut Run) -> Result<Value> {
    let e = &cfg.evaluate;
    let mut models: Vec<(&str, Model)> = Vec::new();
    if let Some(p) = &e.student {
        models.push(("student", open_model(Some(p), "student model")?));
    }
    if let Some(p) = &cfg.teacher.model {
        models.push(("teacher", open_model(Some(p), "teacher model")?));
    }
    if models.is_empty() {
        return Err(Error::Config(
            "evaluate needs evaluate.student and/or teacher.model (or --student / --teacher)".into(),
        ));
    }
    let ds = load_dataset(cfg)?;
    for (name, m) in &models {
        check_model_fits(m, &ds, name)?;
    }
    if e.positive_class >= ds.num_classes() {
        return Err(Error::Config(format!(
            "positive_class {} out of range for {} classes",
            e.positive_class,
            ds.num_classes()
        )));
    }
    if let Some(c) = e.excluded_classes.iter().find(|&&c| c >= ds.num_classes()) {
        return Err(Error::Config(format!("excluded class {c} out of range")));
    }
    let fidelity_ds = match e.fidelity_limit {
        Some(n) => truncate_split(&ds, e.split, n),
        None => ds.clone(),
    };

    let mut headline = BTreeMap::new();
    for (name, model) in &models {
        let metrics = classification_metrics(model, &ds, e.split)?;
        run.write(&format!("metrics_{name}.csv"), metrics.to_csv(&ds.class_names)?)?;
        run.write(&format!("summary_{name}.csv"), metrics.summary_csv()?)?;
        run.write(&format!("confusion_{name}.csv"), metrics.confusion_csv(&ds.class_names)?)?;
        run.write(&format!("confusion_{name}.png"), encode_png(render_confusion(&metrics.confusion))?)?;
        let curve = decision_curve(model, &ds, e.split, &e.thresholds, e.positive_class)?;
        run.write(&format!("dca_{name}.csv"), decision_curve_csv(&curve)?)?;

        let mut results = Vec::new();
        if !e.fidelity_methods.is_empty() {
            for &epsilon in &e.epsilons {
                for &method in &e.fidelity_methods {
                    let fc = FidelityConfig {
                        epsilon,
                        quantile: e.quantile,
                        grid: cfg.explain.grid(),
                        permutations: cfg.explain.permutations,
                        seed: cfg.seed,
                        excluded_classes: e.excluded_classes.clone(),
                    };
                    results.push(fidelity_score(model, &fidelity_ds, e.split, method, &fc)?);
                }
            }
            run.write(
                &format!("fidelity_{name}.csv"),
                fidelity_table_csv(&results, &ds.class_names, &e.excluded_classes)?,
            )?;
            run.write(&format!("fidelity_samples_{name}.csv"), fidelity_samples_csv(&results)?)?;
        }
        let fidelity: BTreeMap<String, f64> = results
            .iter()
            .map(|r| (format!("{}@{}", r.method.as_str(), r.epsilon), r.average))
            .collect();
        headline.insert(
            name.to_string(),
            json!({
                "accuracy": metrics.accuracy,
                "macro_f1": metrics.macro_f1,
                "roc_auc": metrics.roc_auc,
                "mean_loss": metrics.mean_loss,
                "fidelity": fidelity,
                "flops": count_flops(model.spec())?.total,
            }),
        );
    }

    let named: Vec<(&str, &Model)> = models.iter().map(|(n, m)| (*n, m)).collect();
    run.write("flops.csv", flops_csv(&named)?)?;
    if e.efficiency {
        let first = ds.require(e.split)?[0];
        let ec = EfficiencyConfig {
            warmup: e.warmup,
            runs: e.runs,
            grid: cfg.explain.grid(),
            permutations: cfg.explain.permutations,
            seed: cfg.seed,
            alpha_blend: cfg.explain.alpha_blend,
        };
        let rows = efficiency_report(&named, &ds.samples[first].image, &ec)?;
        run.write_timing("efficiency.csv", efficiency_csv(&rows)?)?;
    }
    headline.insert("split".into(), json!(e.split.as_str()));
    Ok(json!(headline))
}
