use serde::{Deserialize, Serialize};

use crate::autodiff::output_extent;
use crate::error::{shape_err, Result};

/// One layer of a sequential CNN.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum LayerSpec {
    Conv {
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    Maxpool {
        window: usize,
        stride: usize,
    },
    Avgpool {
        window: usize,
        stride: usize,
    },
    Relu,
    Flatten,
    Dense {
        units: usize,
    },
    GlobalAvgpool,
}

impl LayerSpec {
    pub fn conv3x3(out_channels: usize) -> Self {
        LayerSpec::Conv {
            out_channels,
            kernel: 3,
            stride: 1,
            padding: 1,
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            LayerSpec::Conv { .. } => "conv",
            LayerSpec::Maxpool { .. } => "maxpool",
            LayerSpec::Avgpool { .. } => "avgpool",
            LayerSpec::Relu => "relu",
            LayerSpec::Flatten => "flatten",
            LayerSpec::Dense { .. } => "dense",
            LayerSpec::GlobalAvgpool => "global-avgpool",
        }
    }

    pub fn is_conv(&self) -> bool {
        matches!(self, LayerSpec::Conv { .. })
    }

    pub fn has_params(&self) -> bool {
        matches!(self, LayerSpec::Conv { .. } | LayerSpec::Dense { .. })
    }

    /// Output shape for the given input shape.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let spatial = |what: &str| -> Result<(usize, usize, usize)> {
            match input {
                &[c, h, w] => Ok((c, h, w)),
                _ => Err(shape_err!("{what} needs a [C,H,W] input, got {input:?}")),
            }
        };
        match *self {
            LayerSpec::Conv {
                out_channels,
                kernel,
                stride,
                padding,
            } => {
                if out_channels == 0 || kernel == 0 || stride == 0 {
                    return Err(shape_err!("conv channels, kernel and stride must be ≥ 1"));
                }
                let (_, h, w) = spatial("conv")?;
                Ok(vec![
                    out_channels,
                    output_extent(h, kernel, stride, padding)?,
                    output_extent(w, kernel, stride, padding)?,
                ])
            }
            LayerSpec::Maxpool { window, stride } | LayerSpec::Avgpool { window, stride } => {
                let (c, h, w) = spatial("pooling")?;
                if window == 0 || window > h || window > w {
                    return Err(shape_err!("pool window {window} does not fit {h}x{w}"));
                }
                Ok(vec![
                    c,
                    output_extent(h, window, stride, 0)?,
                    output_extent(w, window, stride, 0)?,
                ])
            }
            LayerSpec::Relu => Ok(input.to_vec()),
            LayerSpec::Flatten => Ok(vec![input.iter().product()]),
            LayerSpec::GlobalAvgpool => {
                let (c, _, _) = spatial("global pooling")?;
                Ok(vec![c])
            }
            LayerSpec::Dense { units } => {
                if units == 0 {
                    return Err(shape_err!("dense units must be ≥ 1"));
                }
                if input.len() != 1 {
                    return Err(shape_err!("dense needs a flat input, got {input:?}"));
                }
                Ok(vec![units])
            }
        }
    }

    /// Weight and bias shapes for parametric layers.
    pub fn param_shapes(&self, input: &[usize]) -> Option<(Vec<usize>, Vec<usize>)> {
        match *self {
            LayerSpec::Conv {
                out_channels,
                kernel,
                ..
            } => Some((vec![out_channels, input[0], kernel, kernel], vec![out_channels])),
            LayerSpec::Dense { units } => Some((vec![units, input[0]], vec![units])),
            _ => None,
        }
    }
}

/// Declarative sequential architecture.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub name: String,
    pub input_shape: [usize; 3],
    pub layers: Vec<LayerSpec>,
    pub num_classes: usize,
}

impl ModelSpec {
    /// Output shape of every layer, validating the whole spec on the way.
    pub fn propagate(&self) -> Result<Vec<Vec<usize>>> {
        if self.input_shape.contains(&0) {
            return Err(shape_err!("input shape {:?} has a zero dimension", self.input_shape));
        }
        if !self.layers.iter().any(LayerSpec::is_conv) {
            return Err(shape_err!("model '{}' has no conv layer", self.name));
        }
        let mut shape = self.input_shape.to_vec();
        let mut shapes = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            shape = layer
                .output_shape(&shape)
                .map_err(|e| shape_err!("layer {i} ({}): {e}", layer.kind_name()))?;
            shapes.push(shape.clone());
        }
        if shape != [self.num_classes] {
            return Err(shape_err!(
                "model ends at shape {shape:?}, expected logits [{}]",
                self.num_classes
            ));
        }
        Ok(shapes)
    }

    /// Input shape of layer `index`.
    pub fn layer_input_shape(&self, shapes: &[Vec<usize>], index: usize) -> Vec<usize> {
        if index == 0 {
            self.input_shape.to_vec()
        } else {
            shapes[index - 1].clone()
        }
    }

    /// Layer indices of all conv layers, in depth order.
    pub fn conv_indices(&self) -> Vec<usize> {
        self.layers
            .iter()
            .enumerate()
            .filter(|(_, l)| l.is_conv())
            .map(|(i, _)| i)
            .collect()
    }

    pub fn param_count(&self) -> Result<usize> {
        let shapes = self.propagate()?;
        Ok(self
            .layers
            .iter()
            .enumerate()
            .filter_map(|(i, l)| l.param_shapes(&self.layer_input_shape(&shapes, i)))
            .map(|(w, b)| w.iter().product::<usize>() + b.iter().product::<usize>())
            .sum())
    }
}

pub const STUDENT_WIDTHS: [usize; 5] = [8, 16, 32, 32, 64];

/// Five conv blocks (3×3 conv, ReLU, 2×2 max pool), global average pool,
/// dense head.
pub fn build_student_spec(input_shape: [usize; 3], num_classes: usize) -> Result<ModelSpec> {
    if input_shape[1] < 32 || input_shape[2] < 32 {
        return Err(shape_err!(
            "student needs spatial dims ≥ 32 to survive five halvings, got {}x{}",
            input_shape[1],
            input_shape[2]
        ));
    }
    let mut layers = Vec::new();
    for width in STUDENT_WIDTHS {
        layers.push(LayerSpec::conv3x3(width));
        layers.push(LayerSpec::Relu);
        layers.push(LayerSpec::Maxpool { window: 2, stride: 2 });
    }
    layers.push(LayerSpec::GlobalAvgpool);
    layers.push(LayerSpec::Dense { units: num_classes });
    let spec = ModelSpec {
        name: "student".into(),
        input_shape,
        layers,
        num_classes,
    };
    spec.propagate()?;
    Ok(spec)
}

pub const TEACHER_DEFAULT_DEPTH: usize = 10;
pub const TEACHER_MIN_DEPTH: usize = 6;

/// `depth` 3×3 conv + ReLU layers in blocks of two, each block followed by a
/// 2×2 average pool. Block widths double from 16 up to 128.
pub fn build_teacher_spec(input_shape: [usize; 3], num_classes: usize, depth: usize) -> Result<ModelSpec> {
    if depth < TEACHER_MIN_DEPTH {
        return Err(shape_err!("teacher depth must be ≥ {TEACHER_MIN_DEPTH}, got {depth}"));
    }
    let mut layers = Vec::new();
    for i in 0..depth {
        let block = i / 2;
        let width = (16usize << block.min(3)).min(128);
        layers.push(LayerSpec::conv3x3(width));
        layers.push(LayerSpec::Relu);
        if i % 2 == 1 {
            layers.push(LayerSpec::Avgpool { window: 2, stride: 2 });
        }
    }
    layers.push(LayerSpec::GlobalAvgpool);
    layers.push(LayerSpec::Dense { units: num_classes });
    let spec = ModelSpec {
        name: format!("teacher-d{depth}"),
        input_shape,
        layers,
        num_classes,
    };
    spec.propagate()?;
    Ok(spec)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn student_32_ends_at_64x1x1() {
        let spec = build_student_spec([1, 32, 32], 4).unwrap();
        let shapes = spec.propagate().unwrap();
        assert_eq!(shapes.last().unwrap(), &vec![4]);
        // after the fifth block's pool
        let last_pool = spec
            .layers
            .iter()
            .rposition(|l| matches!(l, LayerSpec::Maxpool { .. }))
            .unwrap();
        assert_eq!(shapes[last_pool], vec![64, 1, 1]);
        assert_eq!(spec.layers.iter().filter(|l| l.is_conv()).count(), 5);
    }

    #[test]
    fn student_64_ends_at_64x2x2() {
        let spec = build_student_spec([3, 64, 64], 4).unwrap();
        let shapes = spec.propagate().unwrap();
        let last_pool = spec
            .layers
            .iter()
            .rposition(|l| matches!(l, LayerSpec::Maxpool { .. }))
            .unwrap();
        assert_eq!(shapes[last_pool], vec![64, 2, 2]);
    }

    #[test]
    fn student_rejects_small_input() {
        assert!(build_student_spec([1, 16, 32], 4).is_err());
    }

    #[test]
    fn teacher_uses_avgpool_and_is_bigger() {
        let teacher = build_teacher_spec([1, 32, 32], 4, TEACHER_DEFAULT_DEPTH).unwrap();
        let student = build_student_spec([1, 32, 32], 4).unwrap();
        assert!(teacher.param_count().unwrap() > student.param_count().unwrap());
        assert_eq!(teacher.conv_indices().len(), 10);
        assert!(teacher.layers.iter().all(|l| !matches!(l, LayerSpec::Maxpool { .. })));
        assert_eq!(
            teacher.layers.iter().filter(|l| matches!(l, LayerSpec::Avgpool { .. })).count(),
            5
        );
        assert!(build_teacher_spec([1, 32, 32], 4, 5).is_err());
        // six halvings do not fit a 32x32 input
        assert!(build_teacher_spec([1, 32, 32], 4, 12).is_err());
    }

    #[test]
    fn spec_without_conv_rejected() {
        let spec = ModelSpec {
            name: "mlp".into(),
            input_shape: [1, 2, 2],
            layers: vec![LayerSpec::Flatten, LayerSpec::Dense { units: 3 }],
            num_classes: 3,
        };
        assert!(spec.propagate().is_err());
    }

    #[test]
    fn dense_on_spatial_input_rejected() {
        let spec = ModelSpec {
            name: "bad".into(),
            input_shape: [1, 4, 4],
            layers: vec![LayerSpec::conv3x3(2), LayerSpec::Dense { units: 3 }],
            num_classes: 3,
        };
        assert!(spec.propagate().is_err());
    }

    #[test]
    fn spec_json_roundtrip() {
        let spec = build_student_spec([1, 32, 32], 4).unwrap();
        let json = serde_json::to_string(&spec).unwrap();
        assert!(json.contains("\"kind\":\"global-avgpool\""));
        let back: ModelSpec = serde_json::from_str(&json).unwrap();
        assert_eq!(back, spec);
    }
}
