use kdlens::data::{load_png_tensor, ImageDirOptions};
use kdlens::explain::{
    encode_png, explain_all_layers, grad_cam, render_overlay, shapley_patch, AttributionMap, Method,
};
use kdlens::models::Model;
use kdlens::{Error, Result, Tensor};
use serde::Serialize;
use serde_json::{json, Value};

use super::{check_model_fits, file_stem, load_dataset, open_model};
use crate::config::{ExplainMethod, RunConfig};
use crate::run::Run;

struct Target {
    id: String,
    image: Tensor,
    label: Option<usize>,
}

#[derive(Serialize)]
struct Sidecar<'a> {
    sample_id: &'a str,
    label: Option<usize>,
    predicted_class: usize,
    method: Method,
    target_class: usize,
    normalization: kdlens::explain::Normalization,
    raw_min: f64,
    raw_max: f64,
    argmax_pixel: (usize, usize),
    seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    patch_size: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    baseline: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    permutations: Option<usize>,
    alpha_blend: f64,
    model: String,
}

fn targets(cfg: &RunConfig, model: &Model) -> Result<Vec<Target>> {
    let x = &cfg.explain;
    if !x.images.is_empty() {
        let [channels, height, width] = model.spec().input_shape;
        let opts = ImageDirOptions { channels, height, width };
        return x
            .images
            .iter()
            .map(|p| {
                let id = p.file_stem().map_or_else(|| "image".into(), |s| s.to_string_lossy().into_owned());
                Ok(Target {
                    id,
                    image: load_png_tensor(p, opts)?,
                    label: None,
                })
            })
            .collect();
    }
    let ds = load_dataset(cfg)?;
    check_model_fits(model, &ds, "model")?;
    let indices: Vec<usize> = if x.ids.is_empty() {
        let all = ds.require(x.split)?;
        all.into_iter().take(x.count).collect()
    } else {
        x.ids
            .iter()
            .map(|id| {
                ds.sample_index(id)
                    .ok_or_else(|| Error::Data(format!("no sample with id '{id}'")))
            })
            .collect::<Result<_>>()?
    };
    Ok(indices
        .into_iter()
        .map(|i| {
            let s = &ds.samples[i];
            Target {
                id: s.id.clone(),
                image: s.image.clone(),
                label: Some(s.label),
            }
        })
        .collect())
}

/// Overlay PNGs plus JSON sidecars: `{id}_avg-feature-map_layer{k}`,
/// `{id}_grad-cam_class{c}` and `{id}_shapley-patch_class{c}`.
pub fn explain(cfg: &RunConfig, run: &mut Run) -> Result<Value> {
    let x = &cfg.explain;
    let model_path = x.model.as_deref();
    let model = open_model(model_path, "model to explain (explain.model / --model)")?;
    let model_name = model_path.map(|p| p.display().to_string()).unwrap_or_default();
    let grid = x.grid();
    let mut pngs = 0usize;
    let targets = targets(cfg, &model)?;
    for t in &targets {
        let predicted = model.logits(&t.image)?.argmax();
        let stem = file_stem(&t.id);
        let mut emit = |run: &mut Run, name: String, map: &AttributionMap, png: Vec<u8>| -> Result<()> {
            let shapley = matches!(map.method, Method::ShapleyPatch);
            let sidecar = Sidecar {
                sample_id: &t.id,
                label: t.label,
                predicted_class: predicted,
                method: map.method,
                target_class: map.target_class,
                normalization: map.normalization,
                raw_min: map.raw_min,
                raw_max: map.raw_max,
                argmax_pixel: map.argmax_pixel(),
                seed: cfg.seed,
                patch_size: shapley.then_some(grid.patch_size),
                baseline: shapley.then_some(grid.baseline),
                permutations: shapley.then_some(x.permutations),
                alpha_blend: x.alpha_blend,
                model: model_name.clone(),
            };
            run.write(&format!("{name}.png"), png)?;
            run.write_json(&format!("{name}.json"), &sidecar)?;
            pngs += 1;
            Ok(())
        };
        for method in &x.methods {
            match method {
                ExplainMethod::AvgFeatureMaps => {
                    for layer in explain_all_layers(&model, &t.image, x.alpha_blend)? {
                        let Method::AvgFeatureMap { ordinal, .. } = layer.map.method else { unreachable!() };
                        let png = encode_png(layer.overlay)?;
                        emit(run, format!("{stem}_avg-feature-map_layer{ordinal}"), &layer.map, png)?;
                    }
                }
                ExplainMethod::GradCam => {
                    let map = grad_cam(&model, &t.image, Some(predicted), None)?;
                    let png = encode_png(render_overlay(&t.image, &map, x.alpha_blend)?)?;
                    emit(run, format!("{stem}_grad-cam_class{predicted}"), &map, png)?;
                }
                ExplainMethod::ShapleyPatch => {
                    let map = shapley_patch(&model, &t.image, predicted, &grid, x.permutations, cfg.seed)?;
                    let png = encode_png(render_overlay(&t.image, &map.normalized(), x.alpha_blend)?)?;
                    emit(run, format!("{stem}_shapley-patch_class{predicted}"), &map, png)?;
                }
            }
        }
    }
    Ok(json!({ "images": targets.len(), "overlays": pngs }))
}
