//! Finite-difference checks of every hand-written backward pass.
//!
//! Each primitive `f` is checked through the scalar `L = Σ u ⊙ f(x)` with a
//! random `u`, so the analytic gradient is the backward pass applied to `u`.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

use crate::autodiff::{self, softmax_t_backward};
use crate::distill::{objective_and_grads, BatchItem, Objective, SoftMode};
use crate::error::Result;
use crate::models::{init_weights, LayerSpec, Model, ModelSpec};
use crate::tensor::Tensor;

/// Central-difference step.
pub const STEP: f64 = 1e-5;
/// Gradient magnitudes below this are compared absolutely.
pub const REL_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub name: String,
    pub seed: u64,
    pub checked: usize,
    pub max_rel_error: f64,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Compares `analytic` with central differences of `f` around `x`.
pub fn check(name: &str, seed: u64, x: &[f64], analytic: &[f64], mut f: impl FnMut(&[f64]) -> f64) -> GradCheck {
    assert_eq!(x.len(), analytic.len());
    let mut probe = x.to_vec();
    let mut worst = 0.0f64;
    for i in 0..x.len() {
        probe[i] = x[i] + STEP;
        let up = f(&probe);
        probe[i] = x[i] - STEP;
        let down = f(&probe);
        probe[i] = x[i];
        worst = worst.max(relative_error(analytic[i], (up - down) / (2.0 * STEP)));
    }
    GradCheck {
        name: name.to_string(),
        seed,
        checked: x.len(),
        max_rel_error: worst,
    }
}

fn random(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(lo..hi)).collect()).expect("shape")
}

fn dot(a: &Tensor, b: &Tensor) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

fn with(shape: &[usize], data: &[f64]) -> Tensor {
    Tensor::new(shape.to_vec(), data.to_vec()).expect("shape")
}

/// Values bounded away from zero and pairwise separated, so neither ReLU
/// nor max-pool switches branch within one finite-difference step.
fn separated(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n: usize = shape.iter().product();
    let mut levels: Vec<f64> = (0..n).map(|i| (i as f64 - n as f64 / 2.0 + 0.5) * 0.1).collect();
    for i in (1..n).rev() {
        levels.swap(i, rng.random_range(0..=i));
    }
    let data = levels.iter().map(|v| v + rng.random_range(-0.02..0.02)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape")
}

/// Checks conv, dense, pooling, ReLU and softmax backward passes.
pub fn primitive_suite(seed: u64) -> Result<Vec<GradCheck>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();

    let stride = rng.random_range(1..=2);
    let padding = rng.random_range(0..=1);
    let x = random(&mut rng, &[2, 6, 5], -1.0, 1.0);
    let w = random(&mut rng, &[3, 2, 3, 3], -1.0, 1.0);
    let b = random(&mut rng, &[3], -1.0, 1.0);
    let y = autodiff::conv2d_forward(&x, &w, &b, stride, padding)?;
    let u = random(&mut rng, y.shape(), -1.0, 1.0);
    let g = autodiff::conv2d_backward(&x, &w, &u, stride, padding)?;
    let conv = |x: &Tensor, w: &Tensor, b: &Tensor| dot(&u, &autodiff::conv2d_forward(x, w, b, stride, padding).unwrap());
    out.push(check("conv2d/input", seed, x.data(), g.input_grad.data(), |v| conv(&with(x.shape(), v), &w, &b)));
    out.push(check("conv2d/weight", seed, w.data(), g.weight_grad.data(), |v| conv(&x, &with(w.shape(), v), &b)));
    out.push(check("conv2d/bias", seed, b.data(), g.bias_grad.data(), |v| conv(&x, &w, &with(b.shape(), v))));

    let x = random(&mut rng, &[7], -1.0, 1.0);
    let w = random(&mut rng, &[4, 7], -1.0, 1.0);
    let b = random(&mut rng, &[4], -1.0, 1.0);
    let u = random(&mut rng, &[4], -1.0, 1.0);
    let g = autodiff::dense_backward(&x, &w, &u)?;
    let dense = |x: &Tensor, w: &Tensor, b: &Tensor| dot(&u, &autodiff::dense_forward(x, w, b).unwrap());
    out.push(check("dense/input", seed, x.data(), g.input_grad.data(), |v| dense(&with(x.shape(), v), &w, &b)));
    out.push(check("dense/weight", seed, w.data(), g.weight_grad.data(), |v| dense(&x, &with(w.shape(), v), &b)));
    out.push(check("dense/bias", seed, b.data(), g.bias_grad.data(), |v| dense(&x, &w, &with(b.shape(), v))));

    let x = separated(&mut rng, &[2, 4, 4]);
    let u = random(&mut rng, &[2, 4, 4], -1.0, 1.0);
    let g = autodiff::relu_backward(&x, &u)?;
    out.push(check("relu", seed, x.data(), g.data(), |v| dot(&u, &autodiff::relu(&with(x.shape(), v)))));

    let x = separated(&mut rng, &[2, 6, 6]);
    let (y, idx) = autodiff::maxpool2d(&x, 2, 2)?;
    let u = random(&mut rng, y.shape(), -1.0, 1.0);
    let g = autodiff::maxpool2d_backward(&idx, &u)?;
    out.push(check("maxpool2d", seed, x.data(), g.data(), |v| {
        dot(&u, &autodiff::maxpool2d(&with(x.shape(), v), 2, 2).unwrap().0)
    }));

    for (window, stride) in [(2, 2), (3, 1)] {
        let x = random(&mut rng, &[2, 6, 6], -1.0, 1.0);
        let y = autodiff::avgpool2d(&x, window, stride)?;
        let u = random(&mut rng, y.shape(), -1.0, 1.0);
        let g = autodiff::avgpool2d_backward(x.shape(), &u, window, stride)?;
        out.push(check(&format!("avgpool2d/{window}x{window}s{stride}"), seed, x.data(), g.data(), |v| {
            dot(&u, &autodiff::avgpool2d(&with(x.shape(), v), window, stride).unwrap())
        }));
    }

    let x = random(&mut rng, &[3, 4, 5], -1.0, 1.0);
    let u = random(&mut rng, &[3], -1.0, 1.0);
    let g = autodiff::global_avgpool_backward(x.shape(), &u)?;
    out.push(check("global_avgpool", seed, x.data(), g.data(), |v| {
        dot(&u, &autodiff::global_avgpool(&with(x.shape(), v)).unwrap())
    }));

    let t = rng.random_range(0.5..20.0);
    let z = random(&mut rng, &[5], -4.0, 4.0);
    let u = random(&mut rng, &[5], -1.0, 1.0);
    let p = autodiff::softmax_t(&z, t)?;
    let g = softmax_t_backward(&p, &u, t)?;
    out.push(check("softmax_t", seed, z.data(), g.data(), |v| {
        dot(&u, &autodiff::softmax_t(&with(z.shape(), v), t).unwrap())
    }));
    Ok(out)
}

/// A small network exercising every layer kind used by the student and teacher.
pub fn tiny_network_spec() -> ModelSpec {
    ModelSpec {
        name: "gradcheck".into(),
        input_shape: [1, 8, 8],
        layers: vec![
            LayerSpec::conv3x3(3),
            LayerSpec::Relu,
            LayerSpec::Maxpool { window: 2, stride: 2 },
            LayerSpec::conv3x3(4),
            LayerSpec::Relu,
            LayerSpec::Avgpool { window: 2, stride: 2 },
            LayerSpec::conv3x3(4),
            LayerSpec::Relu,
            LayerSpec::GlobalAvgpool,
            LayerSpec::Dense { units: 3 },
        ],
        num_classes: 3,
    }
}

fn set_params(model: &Model, flat: &[f64]) -> Model {
    let mut params = model.params().to_vec();
    let mut k = 0;
    for p in params.iter_mut().flatten() {
        for t in [&mut p.weight, &mut p.bias] {
            let n = t.len();
            t.data_mut().copy_from_slice(&flat[k..k + n]);
            k += n;
        }
    }
    Model::from_parts(model.spec().clone(), params, model.seed()).expect("same spec")
}

/// Checks the gradient of the batch objective with respect to every
/// parameter of a small network: hard-only, both soft modes.
pub fn objective_suite(seed: u64) -> Result<Vec<GradCheck>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let model = init_weights(&tiny_network_spec(), seed)?;
    let images: Vec<Tensor> = (0..3).map(|_| random(&mut rng, &[1, 8, 8], 0.0, 1.0)).collect();
    let labels: Vec<usize> = (0..3).map(|_| rng.random_range(0..3)).collect();
    let teacher: Vec<Tensor> = (0..3).map(|_| random(&mut rng, &[3], -3.0, 3.0)).collect();
    let alpha = rng.random_range(0.05..0.95);
    let temperature = rng.random_range(1.0..15.0);
    let flat: Vec<f64> = model.param_tensors().flat_map(|t| t.data().to_vec()).collect();

    let objectives = [
        ("objective/hard", Objective::HARD),
        ("objective/teacher-vs-student", Objective { alpha, temperature, soft_mode: SoftMode::TeacherVsStudent }),
        ("objective/paper-literal", Objective { alpha, temperature, soft_mode: SoftMode::PaperLiteral }),
    ];
    let mut out = Vec::new();
    for (name, objective) in objectives {
        let batch = |_: ()| -> Vec<BatchItem> {
            images
                .iter()
                .zip(&labels)
                .zip(&teacher)
                .map(|((x, &y), t)| BatchItem { input: x, label: y, teacher_logits: Some(t.data()) })
                .collect()
        };
        let (_, grads) = objective_and_grads(&model, &batch(()), objective)?;
        let analytic: Vec<f64> = grads
            .iter()
            .flatten()
            .flat_map(|g| g.weight.data().iter().chain(g.bias.data()).copied().collect::<Vec<_>>())
            .collect();
        out.push(check(name, seed, &flat, &analytic, |v| {
            objective_and_grads(&set_params(&model, v), &batch(()), objective).unwrap().0
        }));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn detects_a_wrong_gradient() {
        let r = check("square", 0, &[1.5], &[2.0], |v| v[0] * v[0]);
        assert!(r.max_rel_error > 0.3);
        let r = check("square", 0, &[1.5], &[3.0], |v| v[0] * v[0]);
        assert!(r.max_rel_error < 1e-8);
    }
}
