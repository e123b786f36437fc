//! Analytic floating-point operation counts for one forward pass.
//!
//! Convention: a multiply-accumulate is two FLOPs and bias additions are
//! counted. Conv: `2·H·W·C_out·(k²·C_in) + H·W·C_out`; dense:
//! `2·D_in·D_out + D_out`; pooling: `H_out·W_out·C·window²`; ReLU: one per
//! element. Flatten is free.

use serde::Serialize;

use crate::error::Result;

use super::spec::{LayerSpec, ModelSpec};

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LayerFlops {
    pub index: usize,
    pub kind: &'static str,
    pub flops: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FlopsReport {
    pub layers: Vec<LayerFlops>,
    pub total: u64,
}

pub fn layer_flops(layer: &LayerSpec, input: &[usize], output: &[usize]) -> u64 {
    let prod = |s: &[usize]| s.iter().product::<usize>() as u64;
    match *layer {
        LayerSpec::Conv { kernel, .. } => {
            let (c_in, k) = (input[0] as u64, kernel as u64);
            let out = prod(output);
            2 * out * k * k * c_in + out
        }
        LayerSpec::Dense { units } => {
            let d_in = input[0] as u64;
            2 * d_in * units as u64 + units as u64
        }
        LayerSpec::Maxpool { window, .. } | LayerSpec::Avgpool { window, .. } => {
            prod(output) * (window * window) as u64
        }
        // a single window covering the whole plane
        LayerSpec::GlobalAvgpool => prod(input),
        LayerSpec::Relu => prod(output),
        LayerSpec::Flatten => 0,
    }
}

pub fn count_flops(spec: &ModelSpec) -> Result<FlopsReport> {
    let shapes = spec.propagate()?;
    let layers: Vec<LayerFlops> = spec
        .layers
        .iter()
        .enumerate()
        .map(|(i, layer)| LayerFlops {
            index: i,
            kind: layer.kind_name(),
            flops: layer_flops(layer, &spec.layer_input_shape(&shapes, i), &shapes[i]),
        })
        .collect();
    let total = layers.iter().map(|l| l.flops).sum();
    Ok(FlopsReport { layers, total })
}
