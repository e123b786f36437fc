//! 2-D cross-correlation ("convolution" in the deep-learning sense).
//!
//! The naive direct loop is the reference semantics. The default path lowers
//! the input to a column matrix and runs a single GEMM; both agree elementwise
//! to well below 1e-10.

use crate::error::{shape_err, Result};
use crate::tensor::Tensor;

use super::LayerGrad;

/// Spatial output size of a convolution or pooling window.
pub fn output_extent(input: usize, kernel: usize, stride: usize, padding: usize) -> Result<usize> {
    if stride == 0 {
        return Err(shape_err!("stride must be positive"));
    }
    let padded = input + 2 * padding;
    if kernel == 0 || kernel > padded {
        return Err(shape_err!(
            "kernel extent {kernel} does not fit padded input extent {padded}"
        ));
    }
    Ok((padded - kernel) / stride + 1)
}

struct ConvGeometry {
    c_in: usize,
    h: usize,
    w: usize,
    c_out: usize,
    kh: usize,
    kw: usize,
    h_out: usize,
    w_out: usize,
    stride: usize,
    padding: usize,
}

impl ConvGeometry {
    fn new(input: &Tensor, weights: &Tensor, stride: usize, padding: usize) -> Result<Self> {
        let (c_in, h, w) = input.chw()?;
        let [c_out, wc_in, kh, kw] = weights.shape()[..] else {
            return Err(shape_err!(
                "conv weights must be [C_out,C_in,k_h,k_w], got {:?}",
                weights.shape()
            ));
        };
        if wc_in != c_in {
            return Err(shape_err!(
                "input has {c_in} channels but weights expect {wc_in}"
            ));
        }
        let h_out = output_extent(h, kh, stride, padding)?;
        let w_out = output_extent(w, kw, stride, padding)?;
        Ok(Self {
            c_in,
            h,
            w,
            c_out,
            kh,
            kw,
            h_out,
            w_out,
            stride,
            padding,
        })
    }

    fn patch_len(&self) -> usize {
        self.c_in * self.kh * self.kw
    }

    fn out_pixels(&self) -> usize {
        self.h_out * self.w_out
    }

    /// Source coordinate for output position `o` and kernel offset `k`, or
    /// `None` when it falls into the zero padding.
    #[inline]
    fn source(&self, o: usize, k: usize, extent: usize) -> Option<usize> {
        let pos = (o * self.stride + k) as isize - self.padding as isize;
        (pos >= 0 && (pos as usize) < extent).then_some(pos as usize)
    }

    /// Lowers the input into a `[C_in*k_h*k_w, H_out*W_out]` matrix.
    fn im2col(&self, input: &[f64]) -> Vec<f64> {
        let n = self.out_pixels();
        let mut cols = vec![0.0; self.patch_len() * n];
        for c in 0..self.c_in {
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let row = (c * self.kh + ki) * self.kw + kj;
                    let dst = &mut cols[row * n..(row + 1) * n];
                    for oi in 0..self.h_out {
                        let Some(si) = self.source(oi, ki, self.h) else {
                            continue;
                        };
                        for oj in 0..self.w_out {
                            if let Some(sj) = self.source(oj, kj, self.w) {
                                dst[oi * self.w_out + oj] = input[(c * self.h + si) * self.w + sj];
                            }
                        }
                    }
                }
            }
        }
        cols
    }

    /// Scatter-adds a column matrix back into input layout.
    fn col2im(&self, cols: &[f64]) -> Vec<f64> {
        let n = self.out_pixels();
        let mut out = vec![0.0; self.c_in * self.h * self.w];
        for c in 0..self.c_in {
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let row = (c * self.kh + ki) * self.kw + kj;
                    let src = &cols[row * n..(row + 1) * n];
                    for oi in 0..self.h_out {
                        let Some(si) = self.source(oi, ki, self.h) else {
                            continue;
                        };
                        for oj in 0..self.w_out {
                            if let Some(sj) = self.source(oj, kj, self.w) {
                                out[(c * self.h + si) * self.w + sj] += src[oi * self.w_out + oj];
                            }
                        }
                    }
                }
            }
        }
        out
    }
}

/// Row/column strides of a matrix operand.
#[derive(Clone, Copy)]
struct Layout {
    row: isize,
    col: isize,
}

const ROW_MAJOR: fn(usize) -> Layout = |cols| Layout {
    row: cols as isize,
    col: 1,
};
const TRANSPOSED: fn(usize) -> Layout = |cols| Layout {
    row: 1,
    col: cols as isize,
};

/// `c = a · b + beta · c` for an `m×k` times `k×n` product.
#[allow(clippy::too_many_arguments)]
fn gemm(m: usize, k: usize, n: usize, a: &[f64], la: Layout, b: &[f64], lb: Layout, beta: f64, c: &mut [f64]) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    // SAFETY: the operands are live slices whose lengths cover every index
    // the strides reach (checked above), and `c` does not alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            la.row,
            la.col,
            b.as_ptr(),
            lb.row,
            lb.col,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn check_bias(bias: &Tensor, c_out: usize) -> Result<()> {
    if bias.shape() != [c_out] {
        return Err(shape_err!(
            "conv bias must be [{c_out}], got {:?}",
            bias.shape()
        ));
    }
    Ok(())
}

/// `out[f,i,j] = Σ_{c,u,v} in[c, i·s+u−p, j·s+v−p] · w[f,c,u,v] + b[f]`.
pub fn conv2d_forward(
    input: &Tensor,
    weights: &Tensor,
    bias: &Tensor,
    stride: usize,
    padding: usize,
) -> Result<Tensor> {
    let g = ConvGeometry::new(input, weights, stride, padding)?;
    check_bias(bias, g.c_out)?;
    let n = g.out_pixels();
    let cols = g.im2col(input.data());
    let mut out = Vec::with_capacity(g.c_out * n);
    for &b in bias.data() {
        out.extend(std::iter::repeat_n(b, n));
    }
    let k = g.patch_len();
    gemm(g.c_out, k, n, weights.data(), ROW_MAJOR(k), &cols, ROW_MAJOR(n), 1.0, &mut out);
    Tensor::new(vec![g.c_out, g.h_out, g.w_out], out)
}

/// Direct sextuple-loop convolution. Slow; kept as the reference semantics.
pub fn conv2d_forward_naive(
    input: &Tensor,
    weights: &Tensor,
    bias: &Tensor,
    stride: usize,
    padding: usize,
) -> Result<Tensor> {
    let g = ConvGeometry::new(input, weights, stride, padding)?;
    check_bias(bias, g.c_out)?;
    let x = input.data();
    let w = weights.data();
    let mut out = vec![0.0; g.c_out * g.out_pixels()];
    for f in 0..g.c_out {
        for oi in 0..g.h_out {
            for oj in 0..g.w_out {
                let mut acc = bias.data()[f];
                for c in 0..g.c_in {
                    for ki in 0..g.kh {
                        for kj in 0..g.kw {
                            let (Some(si), Some(sj)) = (g.source(oi, ki, g.h), g.source(oj, kj, g.w)) else {
                                continue;
                            };
                            acc += x[(c * g.h + si) * g.w + sj]
                                * w[((f * g.c_in + c) * g.kh + ki) * g.kw + kj];
                        }
                    }
                }
                out[(f * g.h_out + oi) * g.w_out + oj] = acc;
            }
        }
    }
    Tensor::new(vec![g.c_out, g.h_out, g.w_out], out)
}

/// Gradients of [`conv2d_forward`] with respect to weights, bias and input.
pub fn conv2d_backward(
    input: &Tensor,
    weights: &Tensor,
    upstream: &Tensor,
    stride: usize,
    padding: usize,
) -> Result<LayerGrad> {
    let g = ConvGeometry::new(input, weights, stride, padding)?;
    if upstream.shape() != [g.c_out, g.h_out, g.w_out] {
        return Err(shape_err!(
            "upstream gradient {:?} does not match conv output [{}, {}, {}]",
            upstream.shape(),
            g.c_out,
            g.h_out,
            g.w_out
        ));
    }
    let n = g.out_pixels();
    let k = g.patch_len();
    let dy = upstream.data();

    let bias_grad: Vec<f64> = dy.chunks_exact(n).map(|row| row.iter().sum()).collect();

    let cols = g.im2col(input.data());
    // dW = dY · colsᵀ
    let mut weight_grad = vec![0.0; g.c_out * k];
    gemm(g.c_out, n, k, dy, ROW_MAJOR(n), &cols, TRANSPOSED(n), 0.0, &mut weight_grad);

    // dcols = Wᵀ · dY
    let mut dcols = vec![0.0; k * n];
    gemm(k, g.c_out, n, weights.data(), TRANSPOSED(k), dy, ROW_MAJOR(n), 0.0, &mut dcols);
    let input_grad = g.col2im(&dcols);

    Ok(LayerGrad {
        weight_grad: Tensor::new(weights.shape().to_vec(), weight_grad)?,
        bias_grad: Tensor::new(vec![g.c_out], bias_grad)?,
        input_grad: Tensor::new(input.shape().to_vec(), input_grad)?,
    })
}
