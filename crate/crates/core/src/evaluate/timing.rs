//! Mean execution time and the FLOPs/MET efficiency table.

use serde::{Deserialize, Serialize};
use web_time::Instant;

use crate::error::{Error, Result};
use crate::explain::{explain_all_layers, grad_cam, shapley_patch, PatchGrid};
use crate::models::{count_flops, Model};
use crate::tensor::Tensor;

use super::metrics::finish_csv;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingReport {
    pub operation: String,
    pub warmup: usize,
    pub runs: usize,
    /// Mean seconds per run (MET).
    pub mean_seconds: f64,
    /// Sample standard deviation; zero for a single run.
    pub std_seconds: f64,
}

/// Runs `op` `warmup` times untimed, then times `runs` calls individually.
pub fn measure_met(
    operation: impl Into<String>,
    warmup: usize,
    runs: usize,
    mut op: impl FnMut() -> Result<()>,
) -> Result<TimingReport> {
    if runs == 0 {
        return Err(Error::Domain("at least one measured run is required".into()));
    }
    for _ in 0..warmup {
        op()?;
    }
    let mut times = Vec::with_capacity(runs);
    for _ in 0..runs {
        let start = Instant::now();
        op()?;
        times.push(start.elapsed().as_secs_f64());
    }
    let n = runs as f64;
    let mean = times.iter().sum::<f64>() / n;
    let std_seconds = if runs > 1 {
        (times.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    Ok(TimingReport {
        operation: operation.into(),
        warmup,
        runs,
        mean_seconds: mean,
        std_seconds,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EfficiencyConfig {
    pub warmup: usize,
    pub runs: usize,
    pub grid: PatchGrid,
    pub permutations: usize,
    pub seed: u64,
    pub alpha_blend: f64,
}

impl Default for EfficiencyConfig {
    fn default() -> Self {
        Self {
            warmup: 3,
            runs: 20,
            grid: PatchGrid::default(),
            permutations: 16,
            seed: 42,
            alpha_blend: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyRow {
    pub model: String,
    pub method: String,
    /// Forward-pass FLOPs of the model.
    pub flops: u64,
    pub timing: TimingReport,
}

pub const EFFICIENCY_METHODS: [&str; 3] = ["grad-cam", "shapley-patch", "avg-feature-maps"];

/// FLOPs and explanation MET for each model and method on `image`.
pub fn efficiency_report(
    models: &[(&str, &Model)],
    image: &Tensor,
    config: &EfficiencyConfig,
) -> Result<Vec<EfficiencyRow>> {
    let mut rows = Vec::new();
    for &(name, model) in models {
        let flops = count_flops(model.spec())?.total;
        let class = model.logits(image)?.argmax();
        for method in EFFICIENCY_METHODS {
            let op = format!("{name}/{method}");
            let timing = match method {
                "grad-cam" => measure_met(op, config.warmup, config.runs, || {
                    grad_cam(model, image, Some(class), None).map(drop)
                })?,
                "shapley-patch" => measure_met(op, config.warmup, config.runs, || {
                    shapley_patch(model, image, class, &config.grid, config.permutations, config.seed).map(drop)
                })?,
                _ => measure_met(op, config.warmup, config.runs, || {
                    explain_all_layers(model, image, config.alpha_blend).map(drop)
                })?,
            };
            rows.push(EfficiencyRow {
                model: name.to_string(),
                method: method.to_string(),
                flops,
                timing,
            });
        }
    }
    Ok(rows)
}

pub fn efficiency_csv(rows: &[EfficiencyRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["model", "method", "flops", "met_seconds", "std_seconds", "runs"])?;
    for r in rows {
        w.write_record([
            r.model.clone(),
            r.method.clone(),
            r.flops.to_string(),
            format!("{:.6e}", r.timing.mean_seconds),
            format!("{:.6e}", r.timing.std_seconds),
            r.timing.runs.to_string(),
        ])?;
    }
    finish_csv(w)
}

/// FLOPs only; the deterministic part of the efficiency table.
pub fn flops_csv(models: &[(&str, &Model)]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["model", "flops", "parameters"])?;
    for &(name, model) in models {
        let spec = model.spec();
        w.write_record([name.to_string(), count_flops(spec)?.total.to_string(), spec.param_count()?.to_string()])?;
    }
    finish_csv(w)
}
