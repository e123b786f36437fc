//! Grad-CAM on the logit of a target class.

use crate::error::{shape_err, Error, Result};
use crate::models::Model;
use crate::tensor::Tensor;

use super::feature_layer;
use super::map::{upsample, AttributionMap, Method, Normalization};

/// `ReLU(Σ_k w_k·F_k)` with `w_k` the spatial mean of `grads[k]`. Both
/// arguments are `[C,h,w]`; the result is `[h,w]`.
pub fn grad_cam_from(features: &Tensor, grads: &Tensor) -> Result<Tensor> {
    features.check_same_shape(grads)?;
    let (c, h, w) = features.chw()?;
    if c == 0 || h * w == 0 {
        return Err(shape_err!("empty feature tensor {:?}", features.shape()));
    }
    let plane = h * w;
    let mut cam = vec![0.0; plane];
    for (f, g) in features.data().chunks_exact(plane).zip(grads.data().chunks_exact(plane)) {
        let weight = g.iter().sum::<f64>() / plane as f64;
        for (o, &v) in cam.iter_mut().zip(f) {
            *o += weight * v;
        }
    }
    cam.iter_mut().for_each(|v| *v = v.max(0.0));
    Tensor::new(vec![h, w], cam)
}

/// Grad-CAM map for `target_class` (default: the predicted class) at conv
/// layer `layer_index` (default: the last conv layer).
pub fn grad_cam(
    model: &Model,
    image: &Tensor,
    target_class: Option<usize>,
    layer_index: Option<usize>,
) -> Result<AttributionMap> {
    let spec = model.spec();
    let layer = match layer_index {
        Some(l) => l,
        None => *spec.conv_indices().last().expect("specs contain a conv layer"),
    };
    let at = feature_layer(spec, layer)?;
    let trace = model.forward(image, true)?;
    let m = model.num_classes();
    let class = target_class.unwrap_or_else(|| trace.logits.argmax());
    if class >= m {
        return Err(Error::Usage(format!("target class {class} out of range for {m} classes")));
    }
    let mut seed = Tensor::zeros(&[m]);
    seed.data_mut()[class] = 1.0;
    let grads = model.grad_at_layer(image, &trace, &seed, at)?;
    let cam = grad_cam_from(&trace.activations[at], &grads)?;
    let [_, h, w] = spec.input_shape;
    AttributionMap::new(upsample(&cam, h, w)?, Method::GradCam { layer }, class, Normalization::MinMax)
}
