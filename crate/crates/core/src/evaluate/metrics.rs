//! Argmax classification metrics, one-vs-rest ROC-AUC and decision curves.

use serde::{Deserialize, Serialize};

use crate::autodiff::softmax_slice;
use crate::data::{Dataset, Split};
use crate::distill::PROB_CLAMP;
use crate::error::{shape_err, Error, Result};
use crate::models::Model;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub num_samples: usize,
    pub accuracy: f64,
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    pub f1: Vec<f64>,
    pub macro_f1: f64,
    /// Rows are true classes, columns predicted classes.
    pub confusion: Vec<Vec<usize>>,
    /// One-vs-rest; NaN for a class with no positives or no negatives.
    pub roc_auc: Vec<f64>,
    /// Mean cross-entropy of the true class.
    pub mean_loss: f64,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Area under the ROC curve as the normalized Mann-Whitney statistic,
/// using average ranks so tied scores count one half.
pub fn roc_auc(scores: &[f64], positive: &[bool]) -> f64 {
    assert_eq!(scores.len(), positive.len());
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return f64::NAN;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1..=j+1 share their mean
        let avg = (i + j + 2) as f64 / 2.0;
        rank_sum += order[i..=j].iter().filter(|&&k| positive[k]).count() as f64 * avg;
        i = j + 1;
    }
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    u / (n_pos as f64 * n_neg as f64)
}

/// Metrics from true labels and per-sample class probabilities.
pub fn metrics_from_probabilities(labels: &[usize], probs: &[Vec<f64>], num_classes: usize) -> Result<MetricsReport> {
    if labels.is_empty() {
        return Err(Error::Config("cannot compute metrics on an empty sample set".into()));
    }
    if labels.len() != probs.len() {
        return Err(shape_err!("{} labels but {} probability rows", labels.len(), probs.len()));
    }
    let m = num_classes;
    let mut confusion = vec![vec![0usize; m]; m];
    let mut loss = 0.0;
    for (&y, p) in labels.iter().zip(probs) {
        if p.len() != m || y >= m {
            return Err(shape_err!("label {y} / probability row of length {} for {m} classes", p.len()));
        }
        let pred = crate::tensor::argmax_slice(p);
        confusion[y][pred] += 1;
        loss -= p[y].clamp(PROB_CLAMP, 1.0).ln();
    }
    let n = labels.len();
    let correct: usize = (0..m).map(|c| confusion[c][c]).sum();
    let mut precision = Vec::with_capacity(m);
    let mut recall = Vec::with_capacity(m);
    let mut f1 = Vec::with_capacity(m);
    for c in 0..m {
        let tp = confusion[c][c];
        let predicted: usize = (0..m).map(|r| confusion[r][c]).sum();
        let actual: usize = confusion[c].iter().sum();
        let (p, r) = (ratio(tp, predicted), ratio(tp, actual));
        precision.push(p);
        recall.push(r);
        f1.push(if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) });
    }
    let roc_auc = (0..m)
        .map(|c| {
            let scores: Vec<f64> = probs.iter().map(|p| p[c]).collect();
            let pos: Vec<bool> = labels.iter().map(|&y| y == c).collect();
            roc_auc(&scores, &pos)
        })
        .collect();
    Ok(MetricsReport {
        num_samples: n,
        accuracy: correct as f64 / n as f64,
        macro_f1: f1.iter().sum::<f64>() / m as f64,
        precision,
        recall,
        f1,
        confusion,
        roc_auc,
        mean_loss: loss / n as f64,
    })
}

/// Softmax probabilities of `model` for the samples at `indices`.
pub fn predict_probabilities(model: &Model, dataset: &Dataset, indices: &[usize]) -> Result<Vec<Vec<f64>>> {
    indices
        .iter()
        .map(|&i| Ok(softmax_slice(model.logits(&dataset.samples[i].image)?.data(), 1.0)))
        .collect()
}

pub fn classification_metrics(model: &Model, dataset: &Dataset, split: Split) -> Result<MetricsReport> {
    let indices = dataset.require(split)?;
    let probs = predict_probabilities(model, dataset, &indices)?;
    let labels: Vec<usize> = indices.iter().map(|&i| dataset.samples[i].label).collect();
    metrics_from_probabilities(&labels, &probs, dataset.num_classes())
}

impl MetricsReport {
    /// Per-class table plus a `macro` row.
    pub fn to_csv(&self, class_names: &[String]) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["class", "support", "precision", "recall", "f1", "roc_auc"])?;
        for (c, name) in class_names.iter().enumerate() {
            let support: usize = self.confusion[c].iter().sum();
            w.write_record([
                name.clone(),
                support.to_string(),
                fmt(self.precision[c]),
                fmt(self.recall[c]),
                fmt(self.f1[c]),
                fmt(self.roc_auc[c]),
            ])?;
        }
        let m = class_names.len() as f64;
        let aucs: Vec<f64> = self.roc_auc.iter().copied().filter(|v| !v.is_nan()).collect();
        w.write_record([
            "macro".to_string(),
            self.num_samples.to_string(),
            fmt(self.precision.iter().sum::<f64>() / m),
            fmt(self.recall.iter().sum::<f64>() / m),
            fmt(self.macro_f1),
            fmt(aucs.iter().sum::<f64>() / aucs.len() as f64),
        ])?;
        finish_csv(w)
    }

    pub fn summary_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["metric", "value"])?;
        w.write_record(["samples", &self.num_samples.to_string()])?;
        w.write_record(["accuracy", &fmt(self.accuracy)])?;
        w.write_record(["macro_f1", &fmt(self.macro_f1)])?;
        w.write_record(["mean_loss", &fmt(self.mean_loss)])?;
        finish_csv(w)
    }

    pub fn confusion_csv(&self, class_names: &[String]) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["true\\predicted".to_string()];
        header.extend(class_names.iter().cloned());
        w.write_record(&header)?;
        for (name, row) in class_names.iter().zip(&self.confusion) {
            let mut rec = vec![name.clone()];
            rec.extend(row.iter().map(usize::to_string));
            w.write_record(&rec)?;
        }
        finish_csv(w)
    }
}

pub(crate) fn fmt(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else {
        format!("{v:.6}")
    }
}

pub(crate) fn finish_csv(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| Error::io("<csv buffer>", e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecisionPoint {
    pub threshold: f64,
    pub model: f64,
    pub treat_all: f64,
    pub treat_none: f64,
}

/// Net benefit `TP/n − (FP/n)·p_t/(1−p_t)` of calling a sample positive
/// when `positive_prob ≥ p_t`.
pub fn net_benefit_curve(positive_prob: &[f64], is_positive: &[bool], thresholds: &[f64]) -> Result<Vec<DecisionPoint>> {
    if positive_prob.len() != is_positive.len() || positive_prob.is_empty() {
        return Err(shape_err!(
            "{} scores and {} labels",
            positive_prob.len(),
            is_positive.len()
        ));
    }
    let n = positive_prob.len() as f64;
    let prevalence = is_positive.iter().filter(|&&p| p).count() as f64 / n;
    thresholds
        .iter()
        .map(|&pt| {
            if !(pt > 0.0 && pt < 1.0) {
                return Err(Error::Domain(format!("threshold must lie in (0,1), got {pt}")));
            }
            let odds = pt / (1.0 - pt);
            let (mut tp, mut fp) = (0usize, 0usize);
            for (&p, &pos) in positive_prob.iter().zip(is_positive) {
                if p >= pt {
                    if pos {
                        tp += 1;
                    } else {
                        fp += 1;
                    }
                }
            }
            Ok(DecisionPoint {
                threshold: pt,
                model: tp as f64 / n - fp as f64 / n * odds,
                treat_all: prevalence - (1.0 - prevalence) * odds,
                treat_none: 0.0,
            })
        })
        .collect()
}

pub fn decision_curve(
    model: &Model,
    dataset: &Dataset,
    split: Split,
    thresholds: &[f64],
    positive_class: usize,
) -> Result<Vec<DecisionPoint>> {
    if positive_class >= dataset.num_classes() {
        return Err(Error::Usage(format!("positive class {positive_class} out of range")));
    }
    let indices = dataset.require(split)?;
    let probs = predict_probabilities(model, dataset, &indices)?;
    let scores: Vec<f64> = probs.iter().map(|p| p[positive_class]).collect();
    let pos: Vec<bool> = indices.iter().map(|&i| dataset.samples[i].label == positive_class).collect();
    net_benefit_curve(&scores, &pos, thresholds)
}

pub fn decision_curve_csv(points: &[DecisionPoint]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["threshold", "model", "treat_all", "treat_none"])?;
    for p in points {
        w.write_record([fmt(p.threshold), fmt(p.model), fmt(p.treat_all), fmt(p.treat_none)])?;
    }
    finish_csv(w)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_predictions() {
        let labels = [0, 1, 2, 1];
        let probs: Vec<Vec<f64>> = labels
            .iter()
            .map(|&y| (0..3).map(|c| if c == y { 0.8 } else { 0.1 }).collect())
            .collect();
        let r = metrics_from_probabilities(&labels, &probs, 3).unwrap();
        assert_eq!(r.accuracy, 1.0);
        assert_eq!(r.f1, vec![1.0; 3]);
        assert_eq!(r.confusion, vec![vec![1, 0, 0], vec![0, 2, 0], vec![0, 0, 1]]);
        assert_eq!(r.roc_auc, vec![1.0; 3]);
    }

    #[test]
    fn auc_endpoints() {
        assert_eq!(roc_auc(&[0.1, 0.2, 0.8, 0.9], &[false, false, true, true]), 1.0);
        assert_eq!(roc_auc(&[0.5; 4], &[false, true, false, true]), 0.5);
        assert_eq!(roc_auc(&[0.9, 0.1], &[false, true]), 0.0);
        assert!(roc_auc(&[0.3], &[true]).is_nan());
    }

    #[test]
    fn empty_is_config_error() {
        assert!(matches!(metrics_from_probabilities(&[], &[], 2), Err(Error::Config(_))));
    }

    #[test]
    fn unclassified_class_has_zero_f1() {
        let labels = [0, 1];
        let probs = vec![vec![0.9, 0.1], vec![0.7, 0.3]];
        let r = metrics_from_probabilities(&labels, &probs, 2).unwrap();
        assert_eq!(r.f1[1], 0.0);
        assert_eq!(r.precision[0], 0.5);
    }

    #[test]
    fn decision_curve_endpoints() {
        let pos = [true, false, true, false, false];
        let nothing = net_benefit_curve(&[0.0; 5], &pos, &[0.1, 0.5, 0.9]).unwrap();
        assert!(nothing.iter().all(|p| p.model == 0.0));
        let perfect: Vec<f64> = pos.iter().map(|&p| if p { 1.0 } else { 0.0 }).collect();
        let curve = net_benefit_curve(&perfect, &pos, &[0.1, 0.5, 0.9]).unwrap();
        assert!(curve.iter().all(|p| (p.model - 0.4).abs() < 1e-15));
        assert!(net_benefit_curve(&perfect, &pos, &[1.0]).is_err());
    }
}
