use rand::Rng;

use crate::autodiff::{self, PoolIndices};
use crate::error::{shape_err, Result};
use crate::rng::{rng_for, stream};
use crate::tensor::Tensor;

use super::spec::{LayerSpec, ModelSpec};

/// Weight and bias of one parametric layer. Also used to carry their gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub weight: Tensor,
    pub bias: Tensor,
}

/// A [`ModelSpec`] with bound parameters. Immutable once built; `forward`
/// may be called from several threads at once.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    spec: ModelSpec,
    params: Vec<Option<LayerParams>>,
    seed: u64,
}

/// Result of a forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub logits: Tensor,
    /// Output of every layer, indexed by layer. Empty unless recorded.
    pub activations: Vec<Tensor>,
    /// Max-pool winners for max-pool layers. Empty unless recorded.
    pub pool_indices: Vec<Option<PoolIndices>>,
}

impl ForwardTrace {
    pub fn is_recorded(&self) -> bool {
        !self.activations.is_empty()
    }
}

/// Gradient of a scalar objective with respect to every parameter and the input.
#[derive(Debug, Clone)]
pub struct ModelGrads {
    pub params: Vec<Option<LayerParams>>,
    pub input_grad: Tensor,
}

/// He-uniform draws with bound `√(6/fan_in)`, zero biases.
pub fn init_weights(spec: &ModelSpec, seed: u64) -> Result<Model> {
    let shapes = spec.propagate()?;
    let mut rng = rng_for(seed, stream::INIT, 0);
    let params = spec
        .layers
        .iter()
        .enumerate()
        .map(|(i, layer)| {
            layer
                .param_shapes(&spec.layer_input_shape(&shapes, i))
                .map(|(w_shape, b_shape)| {
                    let fan_in: usize = w_shape[1..].iter().product();
                    let bound = (6.0 / fan_in as f64).sqrt();
                    let n: usize = w_shape.iter().product();
                    let data = (0..n)
                        .map(|_| rng.random_range(-bound..bound))
                        .collect();
                    LayerParams {
                        weight: Tensor::new(w_shape, data).expect("shape from spec"),
                        bias: Tensor::zeros(&b_shape),
                    }
                })
        })
        .collect();
    Ok(Model {
        spec: spec.clone(),
        params,
        seed,
    })
}

impl Model {
    /// Binds explicit parameters after checking them against the spec.
    pub fn from_parts(spec: ModelSpec, params: Vec<Option<LayerParams>>, seed: u64) -> Result<Self> {
        let shapes = spec.propagate()?;
        if params.len() != spec.layers.len() {
            return Err(shape_err!(
                "{} parameter slots for {} layers",
                params.len(),
                spec.layers.len()
            ));
        }
        for (i, (layer, p)) in spec.layers.iter().zip(&params).enumerate() {
            let expected = layer.param_shapes(&spec.layer_input_shape(&shapes, i));
            match (expected, p) {
                (None, None) => {}
                (Some((w, b)), Some(p)) if p.weight.shape() == w && p.bias.shape() == b => {}
                (expected, _) => {
                    return Err(shape_err!(
                        "layer {i}: parameters do not match expected shapes {expected:?}"
                    ))
                }
            }
        }
        Ok(Self { spec, params, seed })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn params(&self) -> &[Option<LayerParams>] {
        &self.params
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn num_classes(&self) -> usize {
        self.spec.num_classes
    }

    /// Iterates over every parameter tensor in layer order (weight, then bias).
    pub fn param_tensors(&self) -> impl Iterator<Item = &Tensor> {
        self.params
            .iter()
            .flatten()
            .flat_map(|p| [&p.weight, &p.bias])
    }

    pub(crate) fn param_tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.params
            .iter_mut()
            .flatten()
            .flat_map(|p| [&mut p.weight, &mut p.bias])
    }

    fn check_input(&self, input: &Tensor) -> Result<()> {
        if input.shape() != self.spec.input_shape {
            return Err(shape_err!(
                "input shape {:?} does not match model input {:?}",
                input.shape(),
                self.spec.input_shape
            ));
        }
        Ok(())
    }

    fn apply_layer(&self, index: usize, x: &Tensor) -> Result<(Tensor, Option<PoolIndices>)> {
        let params = self.params[index].as_ref();
        Ok(match self.spec.layers[index] {
            LayerSpec::Conv { stride, padding, .. } => {
                let p = params.expect("conv layer has params");
                (
                    autodiff::conv2d_forward(x, &p.weight, &p.bias, stride, padding)?,
                    None,
                )
            }
            LayerSpec::Dense { .. } => {
                let p = params.expect("dense layer has params");
                (autodiff::dense_forward(x, &p.weight, &p.bias)?, None)
            }
            LayerSpec::Maxpool { window, stride } => {
                let (y, idx) = autodiff::maxpool2d(x, window, stride)?;
                (y, Some(idx))
            }
            LayerSpec::Avgpool { window, stride } => (autodiff::avgpool2d(x, window, stride)?, None),
            LayerSpec::Relu => (autodiff::relu(x), None),
            LayerSpec::Flatten => {
                let n = x.len();
                (x.clone().reshape(&[n])?, None)
            }
            LayerSpec::GlobalAvgpool => (autodiff::global_avgpool(x)?, None),
        })
    }

    /// Runs the network. With `record`, every layer output is kept in the
    /// trace; the logits are identical either way.
    pub fn forward(&self, input: &Tensor, record: bool) -> Result<ForwardTrace> {
        self.check_input(input)?;
        let n = self.spec.layers.len();
        let mut activations = Vec::with_capacity(if record { n } else { 0 });
        let mut pool_indices = Vec::with_capacity(if record { n } else { 0 });
        let mut x = input.clone();
        for i in 0..n {
            let (y, idx) = self.apply_layer(i, &x)?;
            if record {
                activations.push(y.clone());
                pool_indices.push(idx);
            }
            x = y;
        }
        Ok(ForwardTrace {
            logits: x,
            activations,
            pool_indices,
        })
    }

    pub fn logits(&self, input: &Tensor) -> Result<Tensor> {
        Ok(self.forward(input, false)?.logits)
    }

    /// Runs layers `start..` on `x`, which must be the input of layer `start`.
    pub fn forward_from(&self, start: usize, x: &Tensor) -> Result<Tensor> {
        let mut x = x.clone();
        for i in start..self.spec.layers.len() {
            x = self.apply_layer(i, &x)?.0;
        }
        Ok(x)
    }

    /// Backpropagates `upstream` (the gradient at the output of layer
    /// `from`) down through layer `to`, returning the gradient at the input
    /// of layer `to`. Parameter gradients are collected when `params` is set.
    fn backward_range(
        &self,
        input: &Tensor,
        trace: &ForwardTrace,
        upstream: Tensor,
        to: usize,
        mut params: Option<&mut Vec<Option<LayerParams>>>,
    ) -> Result<Tensor> {
        if !trace.is_recorded() {
            return Err(shape_err!("backward needs a recorded forward trace"));
        }
        let mut grad = upstream;
        for i in (to..self.spec.layers.len()).rev() {
            let layer_in = if i == 0 { input } else { &trace.activations[i - 1] };
            grad = match self.spec.layers[i] {
                LayerSpec::Conv { stride, padding, .. } => {
                    let p = self.params[i].as_ref().expect("conv params");
                    let g = autodiff::conv2d_backward(layer_in, &p.weight, &grad, stride, padding)?;
                    if let Some(acc) = params.as_deref_mut() {
                        acc[i] = Some(LayerParams {
                            weight: g.weight_grad,
                            bias: g.bias_grad,
                        });
                    }
                    g.input_grad
                }
                LayerSpec::Dense { .. } => {
                    let p = self.params[i].as_ref().expect("dense params");
                    let g = autodiff::dense_backward(layer_in, &p.weight, &grad)?;
                    if let Some(acc) = params.as_deref_mut() {
                        acc[i] = Some(LayerParams {
                            weight: g.weight_grad,
                            bias: g.bias_grad,
                        });
                    }
                    g.input_grad
                }
                LayerSpec::Maxpool { .. } => {
                    let idx = trace.pool_indices[i].as_ref().expect("max-pool indices recorded");
                    autodiff::maxpool2d_backward(idx, &grad)?
                }
                LayerSpec::Avgpool { window, stride } => {
                    autodiff::avgpool2d_backward(layer_in.shape(), &grad, window, stride)?
                }
                LayerSpec::Relu => autodiff::relu_backward(layer_in, &grad)?,
                LayerSpec::Flatten => grad.reshape(layer_in.shape())?,
                LayerSpec::GlobalAvgpool => autodiff::global_avgpool_backward(layer_in.shape(), &grad)?,
            };
        }
        Ok(grad)
    }

    /// Full backward pass from a gradient on the logits.
    pub fn backward(&self, input: &Tensor, trace: &ForwardTrace, logit_grad: &Tensor) -> Result<ModelGrads> {
        trace.logits.check_same_shape(logit_grad)?;
        let mut params = vec![None; self.spec.layers.len()];
        let input_grad = self.backward_range(input, trace, logit_grad.clone(), 0, Some(&mut params))?;
        Ok(ModelGrads { params, input_grad })
    }

    /// Gradient of the logits-level objective with respect to the output of
    /// layer `layer` (i.e. `trace.activations[layer]`).
    pub fn grad_at_layer(
        &self,
        input: &Tensor,
        trace: &ForwardTrace,
        logit_grad: &Tensor,
        layer: usize,
    ) -> Result<Tensor> {
        trace.logits.check_same_shape(logit_grad)?;
        if layer >= self.spec.layers.len() {
            return Err(shape_err!("layer index {layer} out of range"));
        }
        self.backward_range(input, trace, logit_grad.clone(), layer + 1, None)
    }

    /// Zero-valued gradient container matching this model's parameters.
    pub fn zero_grads(&self) -> Vec<Option<LayerParams>> {
        self.params
            .iter()
            .map(|p| {
                p.as_ref().map(|p| LayerParams {
                    weight: Tensor::zeros(p.weight.shape()),
                    bias: Tensor::zeros(p.bias.shape()),
                })
            })
            .collect()
    }
}
