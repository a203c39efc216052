//! Forward/backward kernels for the individual layer kinds.
//!
//! Convolutions go through im2col + matmul. Backward passes recompute the
//! column buffer from the cached layer input instead of holding it alive
//! between passes.

use crate::tensor::{matmul_into, Element, Tensor, TensorError};

/// Resolved geometry of one conv or pool application.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct SpatialDims {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub oh: usize,
    pub ow: usize,
}

/// Output extent of a convolution along one axis. Errors when the window
/// does not fit or the stride does not divide the span exactly.
pub(crate) fn conv_extent(
    input: usize,
    kernel: usize,
    stride: usize,
    pad: usize,
) -> Result<usize, String> {
    let span = input + 2 * pad;
    if span < kernel {
        return Err(format!(
            "kernel {kernel} larger than padded input {span}"
        ));
    }
    let run = span - kernel;
    if run % stride != 0 {
        return Err(format!(
            "non-integer output extent: ({input} + 2*{pad} - {kernel}) is not divisible by stride {stride}"
        ));
    }
    Ok(run / stride + 1)
}

/// Pooling extent: floor semantics, trailing remainder is dropped.
pub(crate) fn pool_extent(input: usize, size: usize, stride: usize) -> Result<usize, String> {
    if input < size {
        return Err(format!("pool window {size} larger than input {input}"));
    }
    Ok((input - size) / stride + 1)
}

/// Scatter one input image into columns: `out` is `[c*kh*kw, oh*ow]`,
/// row-major, zero-filled where the window overhangs the padding.
#[allow(clippy::too_many_arguments)]
fn im2col<T: Element>(
    input: &[T],
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
    out: &mut [T],
) {
    let l = oh * ow;
    debug_assert_eq!(out.len(), c * kh * kw * l);
    for ci in 0..c {
        let plane = &input[ci * h * w..(ci + 1) * h * w];
        for ki in 0..kh {
            for kj in 0..kw {
                let row = (ci * kh + ki) * kw + kj;
                let dst = &mut out[row * l..(row + 1) * l];
                for oy in 0..oh {
                    let sy = (oy * stride + ki) as isize - pad as isize;
                    let line = &mut dst[oy * ow..(oy + 1) * ow];
                    if sy < 0 || sy >= h as isize {
                        line.fill(T::ZERO);
                        continue;
                    }
                    let src_line = &plane[sy as usize * w..(sy as usize + 1) * w];
                    for (ox, slot) in line.iter_mut().enumerate() {
                        let sx = (ox * stride + kj) as isize - pad as isize;
                        *slot = if sx >= 0 && (sx as usize) < w {
                            src_line[sx as usize]
                        } else {
                            T::ZERO
                        };
                    }
                }
            }
        }
    }
}

/// Inverse of [`im2col`]: accumulate columns back into the image buffer.
#[allow(clippy::too_many_arguments)]
fn col2im_accumulate<T: Element>(
    cols: &[T],
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
    out: &mut [T],
) {
    let l = oh * ow;
    for ci in 0..c {
        let plane = &mut out[ci * h * w..(ci + 1) * h * w];
        for ki in 0..kh {
            for kj in 0..kw {
                let row = (ci * kh + ki) * kw + kj;
                let src = &cols[row * l..(row + 1) * l];
                for oy in 0..oh {
                    let sy = (oy * stride + ki) as isize - pad as isize;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    for ox in 0..ow {
                        let sx = (ox * stride + kj) as isize - pad as isize;
                        if sx >= 0 && (sx as usize) < w {
                            let idx = sy as usize * w + sx as usize;
                            plane[idx] = plane[idx] + src[oy * ow + ox];
                        }
                    }
                }
            }
        }
    }
}

pub(crate) struct ConvGrads<T: Element> {
    pub input: Tensor<T>,
    /// `(weight grad, bias grad)`, absent for frozen layers.
    pub params: Option<(Tensor<T>, Tensor<T>)>,
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn conv2d_forward<T: Element>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
    pad: usize,
    dims: &SpatialDims,
    out_ch: usize,
) -> Tensor<T> {
    let &SpatialDims { n, c, h, w, oh, ow } = dims;
    let (kh, kw) = (weight.shape()[2], weight.shape()[3]);
    let ckk = c * kh * kw;
    let l = oh * ow;
    let mut cols = vec![T::ZERO; ckk * l];
    let mut out = Tensor::zeros(&[n, out_ch, oh, ow]);
    for s in 0..n {
        im2col(
            &input.data()[s * c * h * w..(s + 1) * c * h * w],
            c,
            h,
            w,
            kh,
            kw,
            stride,
            pad,
            oh,
            ow,
            &mut cols,
        );
        let dst = &mut out.data_mut()[s * out_ch * l..(s + 1) * out_ch * l];
        matmul_into(weight.data(), &cols, dst, out_ch, ckk, l);
        for (o, line) in dst.chunks_mut(l).enumerate() {
            let b = bias.data()[o];
            for v in line {
                *v = *v + b;
            }
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn conv2d_backward<T: Element>(
    cached_input: &Tensor<T>,
    weight: &Tensor<T>,
    upstream: &Tensor<T>,
    stride: usize,
    pad: usize,
    dims: &SpatialDims,
    out_ch: usize,
    want_param_grads: bool,
) -> ConvGrads<T> {
    let &SpatialDims { n, c, h, w, oh, ow } = dims;
    let (kh, kw) = (weight.shape()[2], weight.shape()[3]);
    let ckk = c * kh * kw;
    let l = oh * ow;

    let weight_t = weight
        .clone()
        .reshape(vec![out_ch, ckk])
        .and_then(|m| m.transpose2d())
        .expect("weight reshape");

    let mut grad_input = Tensor::zeros(cached_input.shape());
    let mut grad_w = want_param_grads.then(|| vec![T::ZERO; out_ch * ckk]);
    let mut grad_b = want_param_grads.then(|| vec![T::ZERO; out_ch]);

    let mut cols = vec![T::ZERO; ckk * l];
    let mut cols_t = vec![T::ZERO; l * ckk];
    let mut grad_cols = vec![T::ZERO; ckk * l];
    let mut gw_sample = vec![T::ZERO; out_ch * ckk];

    for s in 0..n {
        let g = &upstream.data()[s * out_ch * l..(s + 1) * out_ch * l];

        // d(input): weight^T [ckk x out_ch] * g [out_ch x l]
        matmul_into(weight_t.data(), g, &mut grad_cols, ckk, out_ch, l);
        col2im_accumulate(
            &grad_cols,
            c,
            h,
            w,
            kh,
            kw,
            stride,
            pad,
            oh,
            ow,
            &mut grad_input.data_mut()[s * c * h * w..(s + 1) * c * h * w],
        );

        if let (Some(gw), Some(gb)) = (grad_w.as_mut(), grad_b.as_mut()) {
            im2col(
                &cached_input.data()[s * c * h * w..(s + 1) * c * h * w],
                c,
                h,
                w,
                kh,
                kw,
                stride,
                pad,
                oh,
                ow,
                &mut cols,
            );
            for r in 0..ckk {
                for q in 0..l {
                    cols_t[q * ckk + r] = cols[r * l + q];
                }
            }
            // d(weight): g [out_ch x l] * cols^T [l x ckk]
            matmul_into(g, &cols_t, &mut gw_sample, out_ch, l, ckk);
            for (acc, &v) in gw.iter_mut().zip(&gw_sample) {
                *acc = *acc + v;
            }
            for (o, line) in g.chunks(l).enumerate() {
                let mut sum = T::ZERO;
                for &v in line {
                    sum = sum + v;
                }
                gb[o] = gb[o] + sum;
            }
        }
    }

    let params = match (grad_w, grad_b) {
        (Some(gw), Some(gb)) => Some((
            Tensor::from_vec(weight.shape().to_vec(), gw).expect("grad shape"),
            Tensor::from_vec(vec![out_ch], gb).expect("bias grad shape"),
        )),
        _ => None,
    };
    ConvGrads {
        input: grad_input,
        params,
    }
}

/// Forward max pooling; returns the output and the flat input index of each
/// window maximum (ties resolved to the lowest flat index by strict `>`).
pub(crate) fn maxpool_forward<T: Element>(
    input: &Tensor<T>,
    size: usize,
    stride: usize,
    dims: &SpatialDims,
) -> (Tensor<T>, Vec<usize>) {
    let &SpatialDims { n, c, h, w, oh, ow } = dims;
    let mut out = Tensor::zeros(&[n, c, oh, ow]);
    let mut argmax = vec![0usize; n * c * oh * ow];
    let data = input.data();
    let mut oi = 0;
    for s in 0..n {
        for ci in 0..c {
            let base = (s * c + ci) * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let y0 = oy * stride;
                    let x0 = ox * stride;
                    let mut best_idx = base + y0 * w + x0;
                    let mut best = data[best_idx];
                    for ky in 0..size {
                        for kx in 0..size {
                            let idx = base + (y0 + ky) * w + (x0 + kx);
                            if data[idx] > best {
                                best = data[idx];
                                best_idx = idx;
                            }
                        }
                    }
                    out.data_mut()[oi] = best;
                    argmax[oi] = best_idx;
                    oi += 1;
                }
            }
        }
    }
    (out, argmax)
}

/// Route every upstream gradient entirely to its recorded argmax position.
pub(crate) fn maxpool_backward<T: Element>(
    input_shape: &[usize],
    argmax: &[usize],
    upstream: &Tensor<T>,
) -> Tensor<T> {
    let mut grad = Tensor::zeros(input_shape);
    let gd = grad.data_mut();
    for (&idx, &g) in argmax.iter().zip(upstream.data()) {
        gd[idx] = gd[idx] + g;
    }
    grad
}

pub(crate) fn dense_forward<T: Element>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<Tensor<T>, TensorError> {
    let out = input.matmul(weight)?;
    out.add(bias)
}

pub(crate) struct DenseGrads<T: Element> {
    pub input: Tensor<T>,
    pub params: Option<(Tensor<T>, Tensor<T>)>,
}

pub(crate) fn dense_backward<T: Element>(
    cached_input: &Tensor<T>,
    weight: &Tensor<T>,
    upstream: &Tensor<T>,
    want_param_grads: bool,
) -> Result<DenseGrads<T>, TensorError> {
    let grad_input = upstream.matmul(&weight.transpose2d()?)?;
    let params = if want_param_grads {
        let grad_w = cached_input.transpose2d()?.matmul(upstream)?;
        let (n, out_dim) = (upstream.shape()[0], upstream.shape()[1]);
        let mut grad_b = Tensor::zeros(&[out_dim]);
        for r in 0..n {
            for j in 0..out_dim {
                grad_b.data_mut()[j] = grad_b.data()[j] + upstream.data()[r * out_dim + j];
            }
        }
        Some((grad_w, grad_b))
    } else {
        None
    };
    Ok(DenseGrads {
        input: grad_input,
        params,
    })
}

pub(crate) fn relu_forward<T: Element>(input: &Tensor<T>) -> (Tensor<T>, Vec<bool>) {
    let mask: Vec<bool> = input.data().iter().map(|&v| v > T::ZERO).collect();
    let out = input.map(|v| v.maximum(T::ZERO));
    (out, mask)
}

pub(crate) fn relu_backward<T: Element>(mask: &[bool], upstream: &Tensor<T>) -> Tensor<T> {
    let data = upstream
        .data()
        .iter()
        .zip(mask)
        .map(|(&g, &keep)| if keep { g } else { T::ZERO })
        .collect();
    Tensor::from_vec(upstream.shape().to_vec(), data).expect("mask length")
}

pub(crate) fn sigmoid_forward<T: Element>(input: &Tensor<T>) -> Tensor<T> {
    input.map(|v| T::ONE / (T::ONE + (-v).exp()))
}

pub(crate) fn sigmoid_backward<T: Element>(output: &Tensor<T>, upstream: &Tensor<T>) -> Tensor<T> {
    let data = upstream
        .data()
        .iter()
        .zip(output.data())
        .map(|(&g, &s)| g * s * (T::ONE - s))
        .collect();
    Tensor::from_vec(upstream.shape().to_vec(), data).expect("shape match")
}
