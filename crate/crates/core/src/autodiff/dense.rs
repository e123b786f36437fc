use crate::error::{shape_err, Result};
use crate::tensor::Tensor;

use super::LayerGrad;

fn dims(input: &Tensor, weights: &Tensor) -> Result<(usize, usize)> {
    let [d_out, d_in] = weights.shape()[..] else {
        return Err(shape_err!("dense weights must be [D_out,D_in], got {:?}", weights.shape()));
    };
    if input.shape() != [d_in] {
        return Err(shape_err!(
            "dense input {:?} does not match D_in = {d_in}",
            input.shape()
        ));
    }
    Ok((d_out, d_in))
}

/// `y = W·x + b`.
pub fn dense_forward(input: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (d_out, d_in) = dims(input, weights)?;
    if bias.shape() != [d_out] {
        return Err(shape_err!("dense bias must be [{d_out}], got {:?}", bias.shape()));
    }
    let x = input.data();
    let out = weights
        .data()
        .chunks_exact(d_in)
        .zip(bias.data())
        .map(|(row, b)| row.iter().zip(x).map(|(w, x)| w * x).sum::<f64>() + b)
        .collect();
    Tensor::new(vec![d_out], out)
}

pub fn dense_backward(input: &Tensor, weights: &Tensor, upstream: &Tensor) -> Result<LayerGrad> {
    let (d_out, d_in) = dims(input, weights)?;
    if upstream.shape() != [d_out] {
        return Err(shape_err!(
            "upstream gradient {:?} does not match D_out = {d_out}",
            upstream.shape()
        ));
    }
    let x = input.data();
    let dy = upstream.data();
    let mut weight_grad = Vec::with_capacity(d_out * d_in);
    for &g in dy {
        weight_grad.extend(x.iter().map(|&xi| g * xi));
    }
    let mut input_grad = vec![0.0; d_in];
    for (row, &g) in weights.data().chunks_exact(d_in).zip(dy) {
        for (acc, &w) in input_grad.iter_mut().zip(row) {
            *acc += w * g;
        }
    }
    Ok(LayerGrad {
        weight_grad: Tensor::new(vec![d_out, d_in], weight_grad)?,
        bias_grad: upstream.clone(),
        input_grad: Tensor::new(vec![d_in], input_grad)?,
    })
}
