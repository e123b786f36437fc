//! FGSM perturbations and the confidence-ratio fidelity score.

use serde::{Deserialize, Serialize};

use crate::autodiff::softmax_slice;
use crate::data::{Dataset, Split};
use crate::distill::PROB_CLAMP;
use crate::error::{shape_err, Error, Result};
use crate::explain::{average_feature_map, grad_cam, shapley_patch, AttributionMap, PatchGrid};
use crate::models::Model;
use crate::rng::{derive_seed, stream};
use crate::tensor::Tensor;

use super::metrics::{finish_csv, fmt};

/// Gradient of the cross-entropy of `true_class` with respect to the input.
pub fn input_gradient(model: &Model, image: &Tensor, true_class: usize) -> Result<Tensor> {
    if true_class >= model.num_classes() {
        return Err(Error::Usage(format!("class {true_class} out of range")));
    }
    let trace = model.forward(image, true)?;
    let mut grad = softmax_slice(trace.logits.data(), 1.0);
    grad[true_class] -= 1.0;
    Ok(model.backward(image, &trace, &Tensor::from_vec(grad))?.input_grad)
}

/// Linear-interpolation quantile (the usual "type 7" definition).
pub fn quantile(values: &[f64], q: f64) -> Result<f64> {
    if values.is_empty() || !(0.0..=1.0).contains(&q) {
        return Err(Error::Domain(format!("quantile {q} of {} values", values.len())));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    Ok(sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64))
}

/// Pixels (in `[H,W]` order) allowed to change: attribution strictly above
/// its `q`-quantile.
pub fn perturbation_mask(map: &AttributionMap, q: f64) -> Result<Vec<bool>> {
    let threshold = quantile(map.values.data(), q)?;
    Ok(map.values.data().iter().map(|&v| v > threshold).collect())
}

/// `clip(x + ε·sign(∇ₓ CE))`, restricted to the top-`q` region of `mask`
/// when given.
pub fn fgsm(
    model: &Model,
    image: &Tensor,
    true_class: usize,
    epsilon: f64,
    mask: Option<(&AttributionMap, f64)>,
) -> Result<Tensor> {
    if !(epsilon >= 0.0) || !epsilon.is_finite() {
        return Err(Error::Domain(format!("epsilon must be non-negative, got {epsilon}")));
    }
    let (_, h, w) = image.chw()?;
    let allowed = match mask {
        Some((map, q)) => {
            if (map.height(), map.width()) != (h, w) {
                return Err(shape_err!("mask is {}x{}, image is {h}x{w}", map.height(), map.width()));
            }
            Some(perturbation_mask(map, q)?)
        }
        None => None,
    };
    let grad = input_gradient(model, image, true_class)?;
    let plane = h * w;
    let mut out = image.clone();
    for (i, (x, &g)) in out.data_mut().iter_mut().zip(grad.data()).enumerate() {
        if allowed.as_ref().is_some_and(|a| !a[i % plane]) {
            continue;
        }
        let step = if g > 0.0 {
            epsilon
        } else if g < 0.0 {
            -epsilon
        } else {
            0.0
        };
        *x = (*x + step).clamp(0.0, 1.0);
    }
    Ok(out)
}

/// Which explanation selects the pixels FGSM may touch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FidelityMethod {
    /// Perturb every pixel.
    Unmasked,
    /// Average feature map of the last conv layer.
    AvgFeatureMap,
    GradCam,
    ShapleyPatch,
}

impl FidelityMethod {
    pub const ALL: [FidelityMethod; 4] = [
        FidelityMethod::Unmasked,
        FidelityMethod::AvgFeatureMap,
        FidelityMethod::GradCam,
        FidelityMethod::ShapleyPatch,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FidelityMethod::Unmasked => "unmasked",
            FidelityMethod::AvgFeatureMap => "avg-feature-map",
            FidelityMethod::GradCam => "grad-cam",
            FidelityMethod::ShapleyPatch => "shapley-patch",
        }
    }
}

impl std::str::FromStr for FidelityMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown fidelity method '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FidelityConfig {
    pub epsilon: f64,
    pub quantile: f64,
    pub grid: PatchGrid,
    pub permutations: usize,
    pub seed: u64,
    /// Classes left out of the per-class averages (e.g. a "normal" class).
    pub excluded_classes: Vec<usize>,
}

impl Default for FidelityConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.02,
            quantile: 0.8,
            grid: PatchGrid::default(),
            permutations: 16,
            seed: 42,
            excluded_classes: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FidelitySample {
    pub id: String,
    pub label: usize,
    pub correct: bool,
    pub c_orig: f64,
    pub c_adv: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FidelityResult {
    pub method: FidelityMethod,
    pub epsilon: f64,
    pub quantile: f64,
    pub samples: Vec<FidelitySample>,
    /// Mean ratio over correctly classified samples of each class; `None`
    /// for excluded classes and classes with no such sample.
    pub per_class: Vec<Option<f64>>,
    /// Mean of the available per-class means.
    pub average: f64,
}

fn true_class_confidence(model: &Model, image: &Tensor, class: usize) -> Result<(f64, bool)> {
    let logits = model.logits(image)?;
    let p = softmax_slice(logits.data(), 1.0);
    Ok((p[class].clamp(PROB_CLAMP, 1.0), logits.argmax() == class))
}

/// `C_adv/C_orig` for every sample of `split`, with per-class means over
/// the correctly classified, non-excluded samples.
pub fn fidelity_score(
    model: &Model,
    dataset: &Dataset,
    split: Split,
    method: FidelityMethod,
    config: &FidelityConfig,
) -> Result<FidelityResult> {
    let indices = dataset.require(split)?;
    let m = dataset.num_classes();
    let mut samples = Vec::with_capacity(indices.len());
    for &i in &indices {
        let s = &dataset.samples[i];
        let (c_orig, correct) = true_class_confidence(model, &s.image, s.label)?;
        let map = match method {
            FidelityMethod::Unmasked => None,
            FidelityMethod::AvgFeatureMap => {
                let trace = model.forward(&s.image, true)?;
                let last = *model.spec().conv_indices().last().expect("conv layer");
                Some(average_feature_map(model, &trace, last)?)
            }
            FidelityMethod::GradCam => Some(grad_cam(model, &s.image, Some(s.label), None)?),
            FidelityMethod::ShapleyPatch => Some(shapley_patch(
                model,
                &s.image,
                s.label,
                &config.grid,
                config.permutations,
                derive_seed(config.seed, stream::SHAPLEY, i as u64),
            )?),
        };
        let adv = fgsm(model, &s.image, s.label, config.epsilon, map.as_ref().map(|m| (m, config.quantile)))?;
        let (c_adv, _) = true_class_confidence(model, &adv, s.label)?;
        samples.push(FidelitySample {
            id: s.id.clone(),
            label: s.label,
            correct,
            c_orig,
            c_adv,
            ratio: c_adv / c_orig,
        });
    }
    let per_class: Vec<Option<f64>> = (0..m)
        .map(|c| {
            if config.excluded_classes.contains(&c) {
                return None;
            }
            let ratios: Vec<f64> = samples.iter().filter(|s| s.label == c && s.correct).map(|s| s.ratio).collect();
            (!ratios.is_empty()).then(|| ratios.iter().sum::<f64>() / ratios.len() as f64)
        })
        .collect();
    let present: Vec<f64> = per_class.iter().flatten().copied().collect();
    let average = if present.is_empty() {
        f64::NAN
    } else {
        present.iter().sum::<f64>() / present.len() as f64
    };
    Ok(FidelityResult {
        method,
        epsilon: config.epsilon,
        quantile: config.quantile,
        samples,
        per_class,
        average,
    })
}

/// One row per method, one column per reported class, then `avg`.
pub fn fidelity_table_csv(results: &[FidelityResult], class_names: &[String], excluded: &[usize]) -> Result<String> {
    let classes: Vec<usize> = (0..class_names.len()).filter(|c| !excluded.contains(c)).collect();
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["method".to_string(), "epsilon".to_string(), "quantile".to_string()];
    header.extend(classes.iter().map(|&c| class_names[c].clone()));
    header.push("avg".into());
    w.write_record(&header)?;
    for r in results {
        let mut rec = vec![r.method.as_str().to_string(), fmt(r.epsilon), fmt(r.quantile)];
        rec.extend(classes.iter().map(|&c| r.per_class.get(c).copied().flatten().map_or("nan".into(), fmt)));
        rec.push(fmt(r.average));
        w.write_record(&rec)?;
    }
    finish_csv(w)
}
