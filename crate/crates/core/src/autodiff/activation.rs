use crate::error::{shape_err, Error, Result};
use crate::tensor::Tensor;

pub fn relu(input: &Tensor) -> Tensor {
    input.map(|x| if x > 0.0 { x } else { 0.0 })
}

/// Gates the upstream gradient by `x > 0` (the subgradient at 0 is 0).
pub fn relu_backward(input: &Tensor, upstream: &Tensor) -> Result<Tensor> {
    input.check_same_shape(upstream)?;
    let data = input
        .data()
        .iter()
        .zip(upstream.data())
        .map(|(&x, &g)| if x > 0.0 { g } else { 0.0 })
        .collect();
    Tensor::new(input.shape().to_vec(), data)
}

fn check_temperature(t: f64) -> Result<()> {
    if !(t > 0.0) || !t.is_finite() {
        return Err(Error::Domain(format!("temperature must be positive and finite, got {t}")));
    }
    Ok(())
}

/// Temperature softmax `e^{z_i/T} / Σ_j e^{z_j/T}` over a 1-D logit vector.
pub fn softmax_t(logits: &Tensor, temperature: f64) -> Result<Tensor> {
    check_temperature(temperature)?;
    if logits.ndim() != 1 {
        return Err(shape_err!("softmax expects a vector, got {:?}", logits.shape()));
    }
    Ok(Tensor::from_vec(softmax_slice(logits.data(), temperature)))
}

pub(crate) fn softmax_slice(z: &[f64], temperature: f64) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut exps: Vec<f64> = z.iter().map(|&v| ((v - max) / temperature).exp()).collect();
    let total: f64 = exps.iter().sum();
    for e in &mut exps {
        *e /= total;
    }
    exps
}

/// Vector-Jacobian product of [`softmax_t`]: given `probs = softmax_T(z)` and
/// `∂L/∂probs`, returns `∂L/∂z`.
pub fn softmax_t_backward(probs: &Tensor, upstream: &Tensor, temperature: f64) -> Result<Tensor> {
    check_temperature(temperature)?;
    probs.check_same_shape(upstream)?;
    let dot: f64 = probs.data().iter().zip(upstream.data()).map(|(p, g)| p * g).sum();
    let data = probs
        .data()
        .iter()
        .zip(upstream.data())
        .map(|(&p, &g)| p * (g - dot) / temperature)
        .collect();
    Tensor::new(probs.shape().to_vec(), data)
}
