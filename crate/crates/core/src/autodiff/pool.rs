use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Result};
use crate::tensor::Tensor;

use super::conv::output_extent;

/// Flat input positions selected by a max-pool forward pass, one per output
/// element, plus the input shape they index into.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolIndices {
    pub input_shape: Vec<usize>,
    pub argmax: Vec<usize>,
}

fn pool_dims(input: &Tensor, window: usize, stride: usize) -> Result<(usize, usize, usize, usize, usize)> {
    let (c, h, w) = input.chw()?;
    if window == 0 {
        return Err(shape_err!("pool window must be positive"));
    }
    if window > h || window > w {
        return Err(shape_err!(
            "pool window {window} larger than input {h}x{w}"
        ));
    }
    let h_out = output_extent(h, window, stride, 0)?;
    let w_out = output_extent(w, window, stride, 0)?;
    Ok((c, h, w, h_out, w_out))
}

/// Max pooling. Ties go to the first position in row-major window order.
pub fn maxpool2d(input: &Tensor, window: usize, stride: usize) -> Result<(Tensor, PoolIndices)> {
    let (c, h, w, h_out, w_out) = pool_dims(input, window, stride)?;
    let x = input.data();
    let mut out = Vec::with_capacity(c * h_out * w_out);
    let mut argmax = Vec::with_capacity(c * h_out * w_out);
    for ch in 0..c {
        for oi in 0..h_out {
            for oj in 0..w_out {
                let mut best_idx = (ch * h + oi * stride) * w + oj * stride;
                let mut best = x[best_idx];
                for u in 0..window {
                    for v in 0..window {
                        let idx = (ch * h + oi * stride + u) * w + oj * stride + v;
                        if x[idx] > best {
                            best = x[idx];
                            best_idx = idx;
                        }
                    }
                }
                out.push(best);
                argmax.push(best_idx);
            }
        }
    }
    Ok((
        Tensor::new(vec![c, h_out, w_out], out)?,
        PoolIndices {
            input_shape: input.shape().to_vec(),
            argmax,
        },
    ))
}

/// Routes each upstream element to the input position that won the forward max.
pub fn maxpool2d_backward(indices: &PoolIndices, upstream: &Tensor) -> Result<Tensor> {
    if upstream.len() != indices.argmax.len() {
        return Err(shape_err!(
            "upstream gradient has {} elements, pooling produced {}",
            upstream.len(),
            indices.argmax.len()
        ));
    }
    let mut grad = Tensor::zeros(&indices.input_shape);
    let g = grad.data_mut();
    for (&idx, &dy) in indices.argmax.iter().zip(upstream.data()) {
        g[idx] += dy;
    }
    Ok(grad)
}

pub fn avgpool2d(input: &Tensor, window: usize, stride: usize) -> Result<Tensor> {
    let (c, h, w, h_out, w_out) = pool_dims(input, window, stride)?;
    let x = input.data();
    let area = (window * window) as f64;
    let mut out = Vec::with_capacity(c * h_out * w_out);
    for ch in 0..c {
        for oi in 0..h_out {
            for oj in 0..w_out {
                let mut acc = 0.0;
                for u in 0..window {
                    let row = (ch * h + oi * stride + u) * w + oj * stride;
                    acc += x[row..row + window].iter().sum::<f64>();
                }
                out.push(acc / area);
            }
        }
    }
    Tensor::new(vec![c, h_out, w_out], out)
}

/// Spreads each upstream element uniformly (÷ window²) over its window.
pub fn avgpool2d_backward(
    input_shape: &[usize],
    upstream: &Tensor,
    window: usize,
    stride: usize,
) -> Result<Tensor> {
    let probe = Tensor::zeros(input_shape);
    let (c, h, w, h_out, w_out) = pool_dims(&probe, window, stride)?;
    if upstream.shape() != [c, h_out, w_out] {
        return Err(shape_err!(
            "upstream gradient {:?} does not match pool output [{c}, {h_out}, {w_out}]",
            upstream.shape()
        ));
    }
    let area = (window * window) as f64;
    let mut grad = probe;
    let g = grad.data_mut();
    let dy = upstream.data();
    for ch in 0..c {
        for oi in 0..h_out {
            for oj in 0..w_out {
                let share = dy[(ch * h_out + oi) * w_out + oj] / area;
                for u in 0..window {
                    for v in 0..window {
                        g[(ch * h + oi * stride + u) * w + oj * stride + v] += share;
                    }
                }
            }
        }
    }
    Ok(grad)
}

/// Mean over the spatial dims: `[C,H,W] -> [C]`.
pub fn global_avgpool(input: &Tensor) -> Result<Tensor> {
    let (c, h, w) = input.chw()?;
    let area = (h * w) as f64;
    let out = input
        .data()
        .chunks_exact(h * w)
        .map(|plane| plane.iter().sum::<f64>() / area)
        .collect();
    Tensor::new(vec![c], out)
}

pub fn global_avgpool_backward(input_shape: &[usize], upstream: &Tensor) -> Result<Tensor> {
    let [c, h, w] = input_shape[..] else {
        return Err(shape_err!("global pool input must be [C,H,W], got {input_shape:?}"));
    };
    if upstream.shape() != [c] {
        return Err(shape_err!(
            "upstream gradient {:?} does not match [{c}]",
            upstream.shape()
        ));
    }
    let area = (h * w) as f64;
    let mut data = Vec::with_capacity(c * h * w);
    for &dy in upstream.data() {
        data.extend(std::iter::repeat_n(dy / area, h * w));
    }
    Tensor::new(input_shape.to_vec(), data)
}
