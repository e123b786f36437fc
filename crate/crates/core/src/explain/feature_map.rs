//! Layer-wise average feature maps.

use image::RgbImage;

use crate::error::{Error, Result};
use crate::models::{ForwardTrace, LayerSpec, Model, ModelSpec};
use crate::tensor::Tensor;

use super::map::{channel_mean, upsample, AttributionMap, Method, Normalization};
use super::render::render_overlay;

/// Index of the layer whose output holds the post-activation feature maps
/// of conv layer `conv_index`: the following ReLU if there is one.
pub fn feature_layer(spec: &ModelSpec, conv_index: usize) -> Result<usize> {
    match spec.layers.get(conv_index) {
        Some(l) if l.is_conv() => {}
        Some(l) => {
            return Err(Error::Usage(format!(
                "layer {conv_index} is a {} layer, not a conv layer",
                l.kind_name()
            )))
        }
        None => return Err(Error::Usage(format!("layer index {conv_index} out of range"))),
    }
    Ok(match spec.layers.get(conv_index + 1) {
        Some(LayerSpec::Relu) => conv_index + 1,
        _ => conv_index,
    })
}

/// Mean over the filters of one conv layer, upsampled to the input size
/// and min-max normalized. The target class recorded is the prediction.
pub fn average_feature_map(model: &Model, trace: &ForwardTrace, layer_index: usize) -> Result<AttributionMap> {
    let spec = model.spec();
    let at = feature_layer(spec, layer_index)?;
    if !trace.is_recorded() {
        return Err(Error::Usage("average feature maps need a recorded forward trace".into()));
    }
    let mean = channel_mean(&trace.activations[at])?;
    let [_, h, w] = spec.input_shape;
    let ordinal = spec.conv_indices().iter().position(|&i| i == layer_index).expect("conv layer") + 1;
    AttributionMap::new(
        upsample(&mean, h, w)?,
        Method::AvgFeatureMap {
            layer: layer_index,
            ordinal,
        },
        trace.logits.argmax(),
        Normalization::MinMax,
    )
}

#[derive(Debug, Clone)]
pub struct LayerExplanation {
    pub map: AttributionMap,
    pub overlay: RgbImage,
}

/// One average feature map per conv layer, in depth order, each with its
/// colormapped overlay on `image`.
pub fn explain_all_layers(model: &Model, image: &Tensor, alpha_blend: f64) -> Result<Vec<LayerExplanation>> {
    let trace = model.forward(image, true)?;
    model
        .spec()
        .conv_indices()
        .into_iter()
        .map(|i| {
            let map = average_feature_map(model, &trace, i)?;
            let overlay = render_overlay(image, &map, alpha_blend)?;
            Ok(LayerExplanation { map, overlay })
        })
        .collect()
}
