//! wasm-bindgen surface for `www/index.html`.
//!
//! Build with `wasm-pack build crates/web --target web --out-dir www/pkg`.

use kdlens::autodiff::softmax_t;
use kdlens::data::{make_synthetic, Split, SynthSpec};
use kdlens::distill::{accuracy_and_loss, train_teacher, TrainConfig};
use kdlens::explain::{explain_all_layers, grad_cam, render_overlay, tensor_to_rgb, RgbImage};
use kdlens::models::{build_student_spec, Model};
use kdlens::{Error, Result, Tensor};
use wasm_bindgen::prelude::*;

pub const SIZE: usize = 32;

fn js(e: Error) -> JsError {
    JsError::new(&e.to_string())
}

fn rgba(img: &RgbImage) -> Vec<u8> {
    img.pixels().flat_map(|p| [p[0], p[1], p[2], 255]).collect()
}

pub fn sample(class: u32, noise: f64, seed: u32) -> Result<Tensor> {
    let spec = SynthSpec {
        noise_sigma: noise,
        samples_per_class: 1,
        seed: seed.into(),
        ..Default::default()
    };
    let ds = make_synthetic(&spec)?;
    let s = ds
        .samples
        .into_iter()
        .nth(class as usize)
        .ok_or_else(|| Error::Usage(format!("class {class} out of range")))?;
    Ok(s.image)
}

/// `softmax(z / T)`.
#[wasm_bindgen]
pub fn softmax(logits: &[f64], temperature: f64) -> std::result::Result<Vec<f64>, JsError> {
    let p = softmax_t(&Tensor::from_vec(logits.to_vec()), temperature).map_err(js)?;
    Ok(p.data().to_vec())
}

/// A synthetic 32×32 sample of `class` as RGBA bytes.
#[wasm_bindgen]
pub fn synthetic_image(class: u32, noise: f64, seed: u32) -> std::result::Result<Vec<u8>, JsError> {
    let img = sample(class, noise, seed).map_err(js)?;
    Ok(rgba(&tensor_to_rgb(&img).map_err(js)?))
}

/// A student trained in the page on a small synthetic set.
#[wasm_bindgen]
pub struct Student {
    model: Model,
    val_accuracy: f64,
}

impl Student {
    pub fn fit(seed: u32, epochs: u32) -> Result<Self> {
        let ds = make_synthetic(&SynthSpec {
            samples_per_class: 40,
            seed: seed.into(),
            ..Default::default()
        })?
        .split(&[0.8, 0.2], seed.into())?;
        let spec = build_student_spec([1, SIZE, SIZE], ds.num_classes())?;
        let cfg = TrainConfig {
            epochs: epochs as usize,
            batch_size: 16,
            learning_rate: 1e-3,
            seed: seed.into(),
        };
        let (model, _) = train_teacher(&spec, &ds, &cfg)?;
        let (val_accuracy, _) = accuracy_and_loss(&model, &ds, &ds.indices(Split::Val))?;
        Ok(Self { model, val_accuracy })
    }

    pub fn overlay(&self, image: &Tensor, method: &str, layer: u32) -> Result<(RgbImage, usize)> {
        let predicted = self.model.logits(image)?.argmax();
        let img = match method {
            "grad-cam" => render_overlay(image, &grad_cam(&self.model, image, Some(predicted), None)?, 0.5)?,
            "avg-feature-map" => {
                let mut layers = explain_all_layers(&self.model, image, 0.5)?;
                let k = layer as usize;
                if k == 0 || k > layers.len() {
                    return Err(Error::Usage(format!("layer must be 1..={}", layers.len())));
                }
                layers.swap_remove(k - 1).overlay
            }
            other => return Err(Error::Usage(format!("unknown method '{other}'"))),
        };
        Ok((img, predicted))
    }
}

#[wasm_bindgen]
impl Student {
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u32, epochs: u32) -> std::result::Result<Student, JsError> {
        Self::fit(seed, epochs).map_err(js)
    }

    #[wasm_bindgen(getter)]
    pub fn val_accuracy(&self) -> f64 {
        self.val_accuracy
    }

    pub fn probabilities(&self, class: u32, noise: f64, seed: u32) -> std::result::Result<Vec<f64>, JsError> {
        let img = sample(class, noise, seed).map_err(js)?;
        let z = self.model.logits(&img).map_err(js)?;
        Ok(softmax_t(&z, 1.0).map_err(js)?.data().to_vec())
    }

    /// RGBA overlay of `method` (`grad-cam` or `avg-feature-map` at conv
    /// `layer`, 1-based) on the sample.
    pub fn explain(&self, class: u32, noise: f64, seed: u32, method: &str, layer: u32) -> std::result::Result<Vec<u8>, JsError> {
        let img = sample(class, noise, seed).map_err(js)?;
        let (overlay, _) = self.overlay(&img, method, layer).map_err(js)?;
        Ok(rgba(&overlay))
    }
}
