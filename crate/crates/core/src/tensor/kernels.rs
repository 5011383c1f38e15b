//! Slice-level forward/backward kernels. Convolutions lower to im2col + GEMM.

use super::Float;
use crate::error::{Error, Result};

/// Geometry of a strided, zero-padded square-kernel convolution over one
/// `channels x height x width` plane stack.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub out_height: usize,
    pub out_width: usize,
}

impl ConvGeom {
    pub fn new(
        channels: usize,
        height: usize,
        width: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
    ) -> Result<Self> {
        if stride == 0 || kernel == 0 {
            return Err(Error::config("kernel and stride must be >= 1"));
        }
        let ph = height + 2 * pad;
        let pw = width + 2 * pad;
        if ph < kernel || pw < kernel {
            return Err(Error::config(format!(
                "{kernel}x{kernel} kernel does not fit padded input {ph}x{pw}"
            )));
        }
        Ok(Self {
            channels,
            height,
            width,
            kernel,
            stride,
            pad,
            out_height: (ph - kernel) / stride + 1,
            out_width: (pw - kernel) / stride + 1,
        })
    }

    pub fn col_rows(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    pub fn col_cols(&self) -> usize {
        self.out_height * self.out_width
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1 && self.pad == 0
    }

    /// Source row for kernel offset `ki` at output row `o`, or `None` in padding.
    #[inline]
    fn src(&self, o: usize, ki: usize, extent: usize) -> Option<usize> {
        let p = o * self.stride + ki;
        if p < self.pad || p - self.pad >= extent {
            None
        } else {
            Some(p - self.pad)
        }
    }
}

/// Unfolds `input` (`C x H x W`) into `cols` (`C*K*K x OH*OW`).
pub fn im2col<T: Float>(g: &ConvGeom, input: &[T], cols: &mut [T]) {
    let (k, oh, ow) = (g.kernel, g.out_height, g.out_width);
    let plane = g.height * g.width;
    for c in 0..g.channels {
        let src = &input[c * plane..(c + 1) * plane];
        for ki in 0..k {
            for kj in 0..k {
                let row = (c * k + ki) * k + kj;
                let dst = &mut cols[row * oh * ow..(row + 1) * oh * ow];
                for oy in 0..oh {
                    let line = &mut dst[oy * ow..(oy + 1) * ow];
                    match g.src(oy, ki, g.height) {
                        None => line.fill(T::zero()),
                        Some(iy) => {
                            let srow = &src[iy * g.width..(iy + 1) * g.width];
                            for (ox, d) in line.iter_mut().enumerate() {
                                *d = match g.src(ox, kj, g.width) {
                                    Some(ix) => srow[ix],
                                    None => T::zero(),
                                };
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters-and-adds `cols` back into `out`.
pub fn col2im<T: Float>(g: &ConvGeom, cols: &[T], out: &mut [T]) {
    let (k, oh, ow) = (g.kernel, g.out_height, g.out_width);
    let plane = g.height * g.width;
    for c in 0..g.channels {
        let dst = &mut out[c * plane..(c + 1) * plane];
        for ki in 0..k {
            for kj in 0..k {
                let row = (c * k + ki) * k + kj;
                let src = &cols[row * oh * ow..(row + 1) * oh * ow];
                for oy in 0..oh {
                    let Some(iy) = g.src(oy, ki, g.height) else {
                        continue;
                    };
                    let drow = &mut dst[iy * g.width..(iy + 1) * g.width];
                    let line = &src[oy * ow..(oy + 1) * ow];
                    for (ox, &v) in line.iter().enumerate() {
                        if let Some(ix) = g.src(ox, kj, g.width) {
                            drow[ix] = drow[ix] + v;
                        }
                    }
                }
            }
        }
    }
}

/// Row-major `m x k` times `k x n`, accumulated into `c` scaled by `beta`.
fn matmul<T: Float>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    a_trans: bool,
    b: &[T],
    b_trans: bool,
    beta: T,
    c: &mut [T],
) {
    let (rsa, csa) = if a_trans { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_trans { (1, k as isize) } else { (n as isize, 1) };
    T::gemm(m, k, n, T::one(), a, rsa, csa, b, rsb, csb, beta, c, n as isize, 1);
}

/// Forward conv for a batch. `weight` is `O x C x K x K`.
pub fn conv2d_forward<T: Float>(
    g: &ConvGeom,
    batch: usize,
    out_channels: usize,
    input: &[T],
    weight: &[T],
    bias: &[T],
) -> Vec<T> {
    let (rows, cols_n) = (g.col_rows(), g.col_cols());
    let in_sz = g.channels * g.height * g.width;
    let out_sz = out_channels * cols_n;
    let mut out = vec![T::zero(); batch * out_sz];
    let mut cols = vec![T::zero(); if g.is_pointwise() { 0 } else { rows * cols_n }];
    for n in 0..batch {
        let x = &input[n * in_sz..(n + 1) * in_sz];
        let o = &mut out[n * out_sz..(n + 1) * out_sz];
        for (oc, chunk) in o.chunks_mut(cols_n).enumerate() {
            chunk.fill(bias[oc]);
        }
        let b = if g.is_pointwise() {
            x
        } else {
            im2col(g, x, &mut cols);
            &cols
        };
        matmul(out_channels, rows, cols_n, weight, false, b, false, T::one(), o);
    }
    out
}

/// Gradients of [`conv2d_forward`]; any of the outputs may be skipped.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_backward<T: Float>(
    g: &ConvGeom,
    batch: usize,
    out_channels: usize,
    input: &[T],
    weight: &[T],
    grad_out: &[T],
    mut grad_input: Option<&mut [T]>,
    mut grad_weight: Option<&mut [T]>,
    mut grad_bias: Option<&mut [T]>,
) {
    let (rows, cols_n) = (g.col_rows(), g.col_cols());
    let in_sz = g.channels * g.height * g.width;
    let out_sz = out_channels * cols_n;
    let mut cols = vec![T::zero(); rows * cols_n];
    for n in 0..batch {
        let go = &grad_out[n * out_sz..(n + 1) * out_sz];
        if let Some(gb) = grad_bias.as_deref_mut() {
            for (oc, chunk) in go.chunks(cols_n).enumerate() {
                gb[oc] = gb[oc] + chunk.iter().copied().sum();
            }
        }
        if let Some(gw) = grad_weight.as_deref_mut() {
            let x = &input[n * in_sz..(n + 1) * in_sz];
            let b: &[T] = if g.is_pointwise() {
                x
            } else {
                im2col(g, x, &mut cols);
                &cols
            };
            matmul(out_channels, cols_n, rows, go, false, b, true, T::one(), gw);
        }
        if let Some(gi) = grad_input.as_deref_mut() {
            let gi = &mut gi[n * in_sz..(n + 1) * in_sz];
            if g.is_pointwise() {
                matmul(rows, out_channels, cols_n, weight, true, go, false, T::one(), gi);
            } else {
                matmul(rows, out_channels, cols_n, weight, true, go, false, T::zero(), &mut cols);
                col2im(g, &cols, gi);
            }
        }
    }
}

/// Transposed convolution: the input-adjoint of a conv whose geometry `g`
/// describes the (larger) output side. `weight` is `Cin x Cout x K x K`,
/// where `Cin` is the channel count of `input` and `Cout = g.channels`.
pub fn conv_transpose_forward<T: Float>(
    g: &ConvGeom,
    batch: usize,
    in_channels: usize,
    input: &[T],
    weight: &[T],
    bias: &[T],
) -> Vec<T> {
    let (rows, cols_n) = (g.col_rows(), g.col_cols());
    let in_sz = in_channels * cols_n;
    let out_sz = g.channels * g.height * g.width;
    let plane = g.height * g.width;
    let mut out = vec![T::zero(); batch * out_sz];
    let mut cols = vec![T::zero(); rows * cols_n];
    for n in 0..batch {
        let y = &input[n * in_sz..(n + 1) * in_sz];
        let o = &mut out[n * out_sz..(n + 1) * out_sz];
        matmul(rows, in_channels, cols_n, weight, true, y, false, T::zero(), &mut cols);
        col2im(g, &cols, o);
        for (oc, chunk) in o.chunks_mut(plane).enumerate() {
            for v in chunk {
                *v = *v + bias[oc];
            }
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
pub fn conv_transpose_backward<T: Float>(
    g: &ConvGeom,
    batch: usize,
    in_channels: usize,
    input: &[T],
    weight: &[T],
    grad_out: &[T],
    mut grad_input: Option<&mut [T]>,
    mut grad_weight: Option<&mut [T]>,
    mut grad_bias: Option<&mut [T]>,
) {
    let (rows, cols_n) = (g.col_rows(), g.col_cols());
    let in_sz = in_channels * cols_n;
    let out_sz = g.channels * g.height * g.width;
    let plane = g.height * g.width;
    let mut cols = vec![T::zero(); rows * cols_n];
    for n in 0..batch {
        let go = &grad_out[n * out_sz..(n + 1) * out_sz];
        if let Some(gb) = grad_bias.as_deref_mut() {
            for (oc, chunk) in go.chunks(plane).enumerate() {
                gb[oc] = gb[oc] + chunk.iter().copied().sum();
            }
        }
        if grad_input.is_none() && grad_weight.is_none() {
            continue;
        }
        im2col(g, go, &mut cols);
        if let Some(gi) = grad_input.as_deref_mut() {
            let gi = &mut gi[n * in_sz..(n + 1) * in_sz];
            matmul(in_channels, rows, cols_n, weight, false, &cols, false, T::one(), gi);
        }
        if let Some(gw) = grad_weight.as_deref_mut() {
            let y = &input[n * in_sz..(n + 1) * in_sz];
            matmul(in_channels, cols_n, rows, y, false, &cols, true, T::one(), gw);
        }
    }
}

/// Per-plane normalisation statistics kept for the backward pass.
pub struct NormCache<T> {
    pub normalized: Vec<T>,
    pub inv_std: Vec<T>,
}

/// Instance norm over `planes` contiguous planes of `plane` elements each;
/// plane `i` uses channel `i % channels` for gain/shift.
pub fn instance_norm_forward<T: Float>(
    input: &[T],
    plane: usize,
    channels: usize,
    gain: &[T],
    shift: &[T],
    eps: T,
) -> (Vec<T>, NormCache<T>) {
    let m = T::from_f64(plane as f64);
    let planes = input.len() / plane;
    let mut out = vec![T::zero(); input.len()];
    let mut normalized = vec![T::zero(); input.len()];
    let mut inv_std = Vec::with_capacity(planes);
    for p in 0..planes {
        let c = p % channels;
        let x = &input[p * plane..(p + 1) * plane];
        let mean = x.iter().copied().sum::<T>() / m;
        let var = x.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / m;
        let is = T::one() / (var + eps).sqrt();
        inv_std.push(is);
        let xh = &mut normalized[p * plane..(p + 1) * plane];
        let o = &mut out[p * plane..(p + 1) * plane];
        for i in 0..plane {
            xh[i] = (x[i] - mean) * is;
            o[i] = gain[c] * xh[i] + shift[c];
        }
    }
    (out, NormCache { normalized, inv_std })
}

pub fn instance_norm_backward<T: Float>(
    cache: &NormCache<T>,
    plane: usize,
    channels: usize,
    gain: &[T],
    grad_out: &[T],
    grad_input: Option<&mut [T]>,
    grad_gain: Option<&mut [T]>,
    grad_shift: Option<&mut [T]>,
) {
    let m = T::from_f64(plane as f64);
    let planes = grad_out.len() / plane;
    let mut grad_input = grad_input;
    let mut grad_gain = grad_gain;
    let mut grad_shift = grad_shift;
    for p in 0..planes {
        let c = p % channels;
        let go = &grad_out[p * plane..(p + 1) * plane];
        let xh = &cache.normalized[p * plane..(p + 1) * plane];
        let sum_go: T = go.iter().copied().sum();
        let sum_go_xh: T = go.iter().zip(xh).map(|(&a, &b)| a * b).sum();
        if let Some(gg) = grad_gain.as_deref_mut() {
            gg[c] = gg[c] + sum_go_xh;
        }
        if let Some(gs) = grad_shift.as_deref_mut() {
            gs[c] = gs[c] + sum_go;
        }
        if let Some(gi) = grad_input.as_deref_mut() {
            let k = gain[c] * cache.inv_std[p] / m;
            let gi = &mut gi[p * plane..(p + 1) * plane];
            for i in 0..plane {
                gi[i] = gi[i] + k * (m * go[i] - sum_go - xh[i] * sum_go_xh);
            }
        }
    }
}

/// Output extent of a `k`-window pool with the given stride.
pub fn pool_extent(size: usize, k: usize, stride: usize) -> Result<usize> {
    if k == 0 || stride == 0 {
        return Err(Error::config("pool window and stride must be >= 1"));
    }
    if k > size {
        return Err(Error::config(format!("pool window {k} exceeds input extent {size}")));
    }
    Ok((size - k) / stride + 1)
}

pub fn avg_pool_forward<T: Float>(
    input: &[T],
    planes: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    oh: usize,
    ow: usize,
) -> Vec<T> {
    let norm = T::one() / T::from_f64((k * k) as f64);
    let mut out = vec![T::zero(); planes * oh * ow];
    for p in 0..planes {
        let x = &input[p * h * w..(p + 1) * h * w];
        let o = &mut out[p * oh * ow..(p + 1) * oh * ow];
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = T::zero();
                for dy in 0..k {
                    let row = (oy * stride + dy) * w + ox * stride;
                    acc = acc + x[row..row + k].iter().copied().sum();
                }
                o[oy * ow + ox] = acc * norm;
            }
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
pub fn avg_pool_backward<T: Float>(
    grad_out: &[T],
    planes: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    oh: usize,
    ow: usize,
    grad_input: &mut [T],
) {
    let norm = T::one() / T::from_f64((k * k) as f64);
    for p in 0..planes {
        let gi = &mut grad_input[p * h * w..(p + 1) * h * w];
        let go = &grad_out[p * oh * ow..(p + 1) * oh * ow];
        for oy in 0..oh {
            for ox in 0..ow {
                let g = go[oy * ow + ox] * norm;
                for dy in 0..k {
                    let row = (oy * stride + dy) * w + ox * stride;
                    for v in &mut gi[row..row + k] {
                        *v = *v + g;
                    }
                }
            }
        }
    }
}
