use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Result};
use crate::resample::resize_bilinear;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "kebab-case")]
pub enum Method {
    /// Channel mean of the activations of conv layer `layer` (index into
    /// the model's layer list); `ordinal` counts conv layers from 1.
    AvgFeatureMap { layer: usize, ordinal: usize },
    GradCam { layer: usize },
    ShapleyPatch,
}

impl Method {
    pub fn slug(&self) -> &'static str {
        match self {
            Method::AvgFeatureMap { .. } => "avg-feature-map",
            Method::GradCam { .. } => "grad-cam",
            Method::ShapleyPatch => "shapley-patch",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Normalization {
    Raw,
    MinMax,
}

/// A per-pixel relevance map in input coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct AttributionMap {
    /// `[H,W]`.
    pub values: Tensor,
    pub method: Method,
    pub target_class: usize,
    pub normalization: Normalization,
    /// Extremes of the map before normalization.
    pub raw_min: f64,
    pub raw_max: f64,
}

impl AttributionMap {
    /// Builds a map from raw values, min-max normalizing when asked.
    pub fn new(values: Tensor, method: Method, target_class: usize, normalization: Normalization) -> Result<Self> {
        values.hw()?;
        let (raw_min, raw_max) = (values.min(), values.max());
        let values = match normalization {
            Normalization::Raw => values,
            Normalization::MinMax => min_max_normalize(&values),
        };
        Ok(Self {
            values,
            method,
            target_class,
            normalization,
            raw_min,
            raw_max,
        })
    }

    pub fn height(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.values.shape()[1]
    }

    /// A min-max normalized copy, as needed for rendering.
    pub fn normalized(&self) -> AttributionMap {
        match self.normalization {
            Normalization::MinMax => self.clone(),
            Normalization::Raw => AttributionMap {
                values: min_max_normalize(&self.values),
                normalization: Normalization::MinMax,
                ..self.clone()
            },
        }
    }

    /// Row-major index of the largest value (first on ties).
    pub fn argmax_pixel(&self) -> (usize, usize) {
        let i = self.values.argmax();
        (i / self.width(), i % self.width())
    }
}

/// Maps values affinely onto `[0,1]`; a constant input becomes all zeros.
pub fn min_max_normalize(values: &Tensor) -> Tensor {
    let (lo, hi) = (values.min(), values.max());
    if !(hi > lo) {
        return Tensor::zeros(values.shape());
    }
    let span = hi - lo;
    values.map(|v| ((v - lo) / span).clamp(0.0, 1.0))
}

/// Mean over channels of a `[C,H,W]` tensor, giving `[H,W]`.
pub fn channel_mean(features: &Tensor) -> Result<Tensor> {
    let (c, h, w) = features.chw()?;
    if c == 0 {
        return Err(shape_err!("feature tensor has no channels"));
    }
    let mut out = vec![0.0; h * w];
    for plane in features.data().chunks_exact(h * w) {
        for (o, &v) in out.iter_mut().zip(plane) {
            *o += v;
        }
    }
    let n = c as f64;
    out.iter_mut().for_each(|v| *v /= n);
    Tensor::new(vec![h, w], out)
}

/// Bilinear upsampling of an `[h,w]` map to `[height,width]`.
pub fn upsample(map: &Tensor, height: usize, width: usize) -> Result<Tensor> {
    let (h, w) = map.hw()?;
    Tensor::new(vec![height, width], resize_bilinear(map.data(), h, w, height, width))
}
