//! Teacher pre-training and teacher→student distillation loops.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use web_time::Instant;

use crate::data::{Dataset, Split};
use crate::error::{shape_err, Error, Result};
use crate::models::{init_weights, LayerParams, Model, ModelSpec};
use crate::rng::{rng_for, stream};
use crate::tensor::Tensor;

use super::adam::{AdamConfig, AdamState};
use super::logits::LogitsTable;
use super::loss::{check_temperature, sample_objective, softmax_cross_entropy, one_hot, SoftMode};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 15,
            batch_size: 16,
            learning_rate: 1e-4,
            seed: 42,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be ≥ 1".into()));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.learning_rate)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DistillConfig {
    pub alpha: f64,
    pub temperature: f64,
    pub soft_mode: SoftMode,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for DistillConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            alpha: 0.7,
            temperature: 10.0,
            soft_mode: SoftMode::TeacherVsStudent,
            epochs: t.epochs,
            batch_size: t.batch_size,
            learning_rate: t.learning_rate,
            seed: t.seed,
        }
    }
}

impl DistillConfig {
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            seed: self.seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Config(format!("alpha must lie in [0,1], got {}", self.alpha)));
        }
        check_temperature(self.temperature).map_err(|e| Error::Config(e.to_string()))?;
        self.train_config().validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_accuracy: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    /// Index into `epochs` of the retained checkpoint.
    pub best_epoch: usize,
    pub wall_clock_seconds: f64,
}

impl TrainReport {
    pub fn best(&self) -> &EpochRecord {
        &self.epochs[self.best_epoch]
    }

    /// Per-epoch CSV. Wall-clock time is left out so the file is reproducible.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["epoch", "train_loss", "val_accuracy", "val_loss", "best"])?;
        for (i, e) in self.epochs.iter().enumerate() {
            w.write_record([
                e.epoch.to_string(),
                format!("{:.6}", e.train_loss),
                format!("{:.6}", e.val_accuracy),
                format!("{:.6}", e.val_loss),
                u8::from(i == self.best_epoch).to_string(),
            ])?;
        }
        Ok(String::from_utf8(w.into_inner().expect("in-memory writer")).expect("ascii"))
    }
}

/// One training example for [`objective_and_grads`].
#[derive(Debug, Clone, Copy)]
pub struct BatchItem<'a> {
    pub input: &'a Tensor,
    pub label: usize,
    pub teacher_logits: Option<&'a [f64]>,
}

/// Objective settings. A hard-only objective is `alpha = 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Objective {
    pub alpha: f64,
    pub temperature: f64,
    pub soft_mode: SoftMode,
}

impl Objective {
    pub const HARD: Objective = Objective {
        alpha: 1.0,
        temperature: 1.0,
        soft_mode: SoftMode::TeacherVsStudent,
    };
}

impl From<&DistillConfig> for Objective {
    fn from(c: &DistillConfig) -> Self {
        Objective {
            alpha: c.alpha,
            temperature: c.temperature,
            soft_mode: c.soft_mode,
        }
    }
}

/// Mean objective over `batch` and its gradient with respect to every
/// parameter of `model`.
pub fn objective_and_grads(
    model: &Model,
    batch: &[BatchItem<'_>],
    objective: Objective,
) -> Result<(f64, Vec<Option<LayerParams>>)> {
    if batch.is_empty() {
        return Err(shape_err!("empty batch"));
    }
    let mut grads = model.zero_grads();
    let mut total = 0.0;
    let scale = 1.0 / batch.len() as f64;
    for item in batch {
        let trace = model.forward(item.input, true)?;
        let obj = sample_objective(
            item.label,
            trace.logits.data(),
            item.teacher_logits,
            objective.alpha,
            objective.temperature,
            objective.soft_mode,
        );
        total += obj.loss;
        let g = model.backward(item.input, &trace, &Tensor::from_vec(obj.logit_grad))?;
        for (acc, gi) in grads.iter_mut().zip(g.params) {
            if let (Some(acc), Some(gi)) = (acc.as_mut(), gi) {
                acc.weight.add_scaled(&gi.weight, scale)?;
                acc.bias.add_scaled(&gi.bias, scale)?;
            }
        }
    }
    Ok((total * scale, grads))
}

/// Accuracy and mean cross-entropy of `model` over `indices`.
pub fn accuracy_and_loss(model: &Model, dataset: &Dataset, indices: &[usize]) -> Result<(f64, f64)> {
    let mut correct = 0usize;
    let mut loss = 0.0;
    for &i in indices {
        let s = &dataset.samples[i];
        let logits = model.logits(&s.image)?;
        if logits.argmax() == s.label {
            correct += 1;
        }
        loss += softmax_cross_entropy(&one_hot(s.label, logits.len()), logits.data(), 1.0).0;
    }
    let n = indices.len() as f64;
    Ok((correct as f64 / n, loss / n))
}

fn check_compatible(spec: &ModelSpec, dataset: &Dataset) -> Result<()> {
    if dataset.image_shape() != Some(spec.input_shape) {
        return Err(Error::Config(format!(
            "dataset images {:?} do not match model input {:?}",
            dataset.image_shape(),
            spec.input_shape
        )));
    }
    if dataset.num_classes() != spec.num_classes {
        return Err(Error::Config(format!(
            "dataset has {} classes, model has {}",
            dataset.num_classes(),
            spec.num_classes
        )));
    }
    Ok(())
}

/// Mini-batch Adam over the training split, keeping the checkpoint with the
/// best validation accuracy (ties: lower validation loss, then earlier epoch).
fn fit(
    spec: &ModelSpec,
    dataset: &Dataset,
    config: TrainConfig,
    objective: Objective,
    teacher_logits: Option<&[Vec<f64>]>,
) -> Result<(Model, TrainReport)> {
    config.validate()?;
    spec.propagate()?;
    check_compatible(spec, dataset)?;
    let train = dataset.require(Split::Train)?;
    let val = dataset.require(Split::Val)?;
    let started = Instant::now();

    let mut model = init_weights(spec, config.seed)?;
    let mut adam = AdamState::for_model(
        AdamConfig {
            learning_rate: config.learning_rate,
            ..AdamConfig::default()
        },
        &model,
    );
    let mut epochs = Vec::with_capacity(config.epochs);
    let mut best: Option<(usize, Model)> = None;

    for epoch in 0..config.epochs {
        let mut order = train.clone();
        order.shuffle(&mut rng_for(config.seed, stream::SHUFFLE, epoch as u64));
        let mut loss_sum = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<BatchItem> = chunk
                .iter()
                .map(|&i| BatchItem {
                    input: &dataset.samples[i].image,
                    label: dataset.samples[i].label,
                    teacher_logits: teacher_logits.map(|t| t[i].as_slice()),
                })
                .collect();
            let (loss, grads) = objective_and_grads(&model, &batch, objective)?;
            loss_sum += loss * chunk.len() as f64;
            adam.step_model(&mut model, &grads)?;
        }
        let (val_accuracy, val_loss) = accuracy_and_loss(&model, dataset, &val)?;
        let record = EpochRecord {
            epoch: epoch + 1,
            train_loss: loss_sum / train.len() as f64,
            val_accuracy,
            val_loss,
        };
        let improved = match &best {
            None => true,
            Some((b, _)) => {
                let b: &EpochRecord = &epochs[*b];
                val_accuracy > b.val_accuracy || (val_accuracy == b.val_accuracy && val_loss < b.val_loss)
            }
        };
        epochs.push(record);
        if improved {
            best = Some((epoch, model.clone()));
        }
    }
    let (best_epoch, best_model) = best.expect("at least one epoch");
    Ok((
        best_model,
        TrainReport {
            epochs,
            best_epoch,
            wall_clock_seconds: started.elapsed().as_secs_f64(),
        },
    ))
}

/// Trains `spec` from scratch with the cross-entropy loss alone.
pub fn train_teacher(spec: &ModelSpec, dataset: &Dataset, config: &TrainConfig) -> Result<(Model, TrainReport)> {
    fit(spec, dataset, *config, Objective::HARD, None)
}

/// Where teacher predictions come from during distillation.
#[derive(Debug, Clone, Copy)]
pub enum Teacher<'a> {
    Model(&'a Model),
    Logits(&'a LogitsTable),
}

/// Distils `teacher` into a fresh student built from `student_spec`.
///
/// The teacher is only run in inference mode. Its logits for every training
/// sample are computed once up front; since it is frozen and deterministic
/// this equals evaluating it per batch.
pub fn distill(
    teacher: Teacher<'_>,
    student_spec: &ModelSpec,
    dataset: &Dataset,
    config: &DistillConfig,
) -> Result<(Model, TrainReport)> {
    config.validate()?;
    check_compatible(student_spec, dataset)?;
    let train = dataset.require(Split::Train)?;
    let m = dataset.num_classes();
    let mut table = vec![Vec::new(); dataset.len()];
    for &i in &train {
        let sample = &dataset.samples[i];
        let logits = match teacher {
            Teacher::Model(t) => t.logits(&sample.image)?.into_data(),
            Teacher::Logits(tab) => tab
                .get(&sample.id)
                .ok_or_else(|| Error::Data(format!("no teacher logits for sample '{}'", sample.id)))?
                .to_vec(),
        };
        if logits.len() != m {
            return Err(Error::Data(format!(
                "teacher logits for '{}' have {} classes, dataset has {m}",
                sample.id,
                logits.len()
            )));
        }
        table[i] = logits;
    }
    fit(student_spec, dataset, config.train_config(), config.into(), Some(&table))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_validation() {
        assert!(DistillConfig::default().validate().is_ok());
        assert!(DistillConfig { alpha: 1.2, ..Default::default() }.validate().is_err());
        assert!(DistillConfig { temperature: 0.0, ..Default::default() }.validate().is_err());
        assert!(DistillConfig { batch_size: 0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { epochs: 0, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn paper_defaults() {
        let c = DistillConfig::default();
        assert_eq!(c.batch_size, 16);
        assert_eq!(c.learning_rate, 1e-4);
    }
}
