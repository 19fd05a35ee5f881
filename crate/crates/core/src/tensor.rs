//! Dense `[channels, height, width]` tensors of `f64` and the numeric kernels
//! (convolution, resizing, axis pooling, broadcasting) the autograd tape is
//! built from. Every kernel has a matching backward routine here so the tape
//! stays a thin bookkeeping layer.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math;

/// `[channels, height, width]`.
pub type Shape = [usize; 3];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Shape,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: Shape) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: Shape, value: f64) -> Self {
        Self {
            shape,
            data: vec![value; shape[0] * shape[1] * shape[2]],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self::full([1, 1, 1], value)
    }

    pub fn from_vec(shape: Shape, data: Vec<f64>) -> Result<Self> {
        if data.len() != shape[0] * shape[1] * shape[2] {
            return Err(Error::DataLength {
                len: data.len(),
                shape,
            });
        }
        Ok(Self { shape, data })
    }

    pub fn from_fn(shape: Shape, mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(shape[0] * shape[1] * shape[2]);
        for c in 0..shape[0] {
            for y in 0..shape[1] {
                for x in 0..shape[2] {
                    data.push(f(c, y, x));
                }
            }
        }
        Self { shape, data }
    }

    #[inline]
    pub fn shape(&self) -> Shape {
        self.shape
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.shape[0]
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.shape[1]
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.shape[2]
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn at(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.shape[1] + y) * self.shape[2] + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, value: f64) {
        let idx = (c * self.shape[1] + y) * self.shape[2] + x;
        self.data[idx] = value;
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let plane = self.shape[1] * self.shape[2];
        &self.data[c * plane..(c + 1) * plane]
    }

    /// Returns the scalar held by a `[1, 1, 1]` tensor.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        self.expect_shape(other, "zip_map")?;
        Ok(Self {
            shape: self.shape,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add_assign(&mut self, other: &Self) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.data.len() as f64
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn has_nan(&self) -> bool {
        self.data.iter().any(|v| v.is_nan())
    }

    pub fn is_binary(&self) -> bool {
        self.data.iter().all(|&v| v == 0.0 || v == 1.0)
    }

    pub fn expect_shape(&self, other: &Self, op: &'static str) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch {
                op,
                left: self.shape,
                right: other.shape,
            });
        }
        Ok(())
    }

    /// Channel-wise concatenation.
    pub fn concat(parts: &[&Tensor]) -> Result<Self> {
        let first = parts[0];
        let (h, w) = (first.height(), first.width());
        let mut channels = 0;
        for p in parts {
            if p.height() != h || p.width() != w {
                return Err(Error::ShapeMismatch {
                    op: "concat",
                    left: first.shape,
                    right: p.shape,
                });
            }
            channels += p.channels();
        }
        let mut data = Vec::with_capacity(channels * h * w);
        for p in parts {
            data.extend_from_slice(&p.data);
        }
        Ok(Self {
            shape: [channels, h, w],
            data,
        })
    }

    pub fn slice_channels(&self, start: usize, len: usize) -> Self {
        let plane = self.shape[1] * self.shape[2];
        Self {
            shape: [len, self.shape[1], self.shape[2]],
            data: self.data[start * plane..(start + len) * plane].to_vec(),
        }
    }

    /// Bilinear resize with half-pixel centres and edge clamping.
    pub fn resize_bilinear(&self, height: usize, width: usize) -> Self {
        if height == self.height() && width == self.width() {
            return self.clone();
        }
        let ys = linear_taps(self.height(), height);
        let xs = linear_taps(self.width(), width);
        let mut out = Tensor::zeros([self.channels(), height, width]);
        let (ih, iw) = (self.height(), self.width());
        for c in 0..self.channels() {
            let src = &self.data[c * ih * iw..(c + 1) * ih * iw];
            let dst = &mut out.data[c * height * width..(c + 1) * height * width];
            for (oy, ty) in ys.iter().enumerate() {
                let r0 = &src[ty.i0 * iw..(ty.i0 + 1) * iw];
                let r1 = &src[ty.i1 * iw..(ty.i1 + 1) * iw];
                for (ox, tx) in xs.iter().enumerate() {
                    let top = (1.0 - tx.l) * r0[tx.i0] + tx.l * r0[tx.i1];
                    let bottom = (1.0 - tx.l) * r1[tx.i0] + tx.l * r1[tx.i1];
                    dst[oy * width + ox] = (1.0 - ty.l) * top + ty.l * bottom;
                }
            }
        }
        out
    }

    /// Adjoint of [`Tensor::resize_bilinear`]: scatters `grad` (output-sized)
    /// back onto an input of shape `input_shape`.
    pub fn resize_bilinear_backward(grad: &Tensor, input_shape: Shape) -> Tensor {
        let [c_n, ih, iw] = input_shape;
        let (oh, ow) = (grad.height(), grad.width());
        if oh == ih && ow == iw {
            return grad.clone();
        }
        let ys = linear_taps(ih, oh);
        let xs = linear_taps(iw, ow);
        let mut out = Tensor::zeros(input_shape);
        for c in 0..c_n {
            let g = &grad.data[c * oh * ow..(c + 1) * oh * ow];
            let dst = &mut out.data[c * ih * iw..(c + 1) * ih * iw];
            for (oy, ty) in ys.iter().enumerate() {
                for (ox, tx) in xs.iter().enumerate() {
                    let v = g[oy * ow + ox];
                    let top = (1.0 - ty.l) * v;
                    let bottom = ty.l * v;
                    dst[ty.i0 * iw + tx.i0] += (1.0 - tx.l) * top;
                    dst[ty.i0 * iw + tx.i1] += tx.l * top;
                    dst[ty.i1 * iw + tx.i0] += (1.0 - tx.l) * bottom;
                    dst[ty.i1 * iw + tx.i1] += tx.l * bottom;
                }
            }
        }
        out
    }

    /// Nearest-neighbour resize (`src = floor(dst * in / out)`); keeps binary maps binary.
    pub fn resize_nearest(&self, height: usize, width: usize) -> Self {
        let (ih, iw) = (self.height(), self.width());
        Tensor::from_fn([self.channels(), height, width], |c, y, x| {
            let sy = ((y * ih) / height).min(ih - 1);
            let sx = ((x * iw) / width).min(iw - 1);
            self.at(c, sy, sx)
        })
    }

    /// Mean over the axes a pooling `axis` removes.
    pub fn pool(&self, axis: PoolAxis) -> Tensor {
        let [c_n, h, w] = self.shape;
        let out_shape = axis.pooled_shape(self.shape);
        let mut out = Tensor::zeros(out_shape);
        match axis {
            PoolAxis::OverHeight => {
                for c in 0..c_n {
                    for y in 0..h {
                        for x in 0..w {
                            out.data[c * w + x] += self.at(c, y, x);
                        }
                    }
                }
                out.data.iter_mut().for_each(|v| *v /= h as f64);
            }
            PoolAxis::OverWidth => {
                for c in 0..c_n {
                    for y in 0..h {
                        let row = &self.data[(c * h + y) * w..(c * h + y + 1) * w];
                        out.data[c * h + y] = row.iter().sum::<f64>() / w as f64;
                    }
                }
            }
            PoolAxis::OverSpatial => {
                for c in 0..c_n {
                    out.data[c] = self.channel(c).iter().sum::<f64>() / (h * w) as f64;
                }
            }
            PoolAxis::OverChannels => {
                for c in 0..c_n {
                    for (o, v) in out.data.iter_mut().zip(self.channel(c)) {
                        *o += v;
                    }
                }
                out.data.iter_mut().for_each(|v| *v /= c_n as f64);
            }
        }
        out
    }

    /// Adjoint of [`Tensor::pool`].
    pub fn pool_backward(grad: &Tensor, axis: PoolAxis, input_shape: Shape) -> Tensor {
        let count = match axis {
            PoolAxis::OverHeight => input_shape[1],
            PoolAxis::OverWidth => input_shape[2],
            PoolAxis::OverSpatial => input_shape[1] * input_shape[2],
            PoolAxis::OverChannels => input_shape[0],
        } as f64;
        let spread = grad.map(|v| v / count);
        spread.broadcast_to(input_shape)
    }

    /// Repeats size-1 axes up to `shape`.
    pub fn broadcast_to(&self, shape: Shape) -> Tensor {
        if self.shape == shape {
            return self.clone();
        }
        let s = self.shape;
        Tensor::from_fn(shape, |c, y, x| {
            self.at(
                if s[0] == 1 { 0 } else { c },
                if s[1] == 1 { 0 } else { y },
                if s[2] == 1 { 0 } else { x },
            )
        })
    }

    /// Sums `self` down to `shape`, the adjoint of [`Tensor::broadcast_to`].
    pub fn reduce_to(&self, shape: Shape) -> Tensor {
        if self.shape == shape {
            return self.clone();
        }
        let mut out = Tensor::zeros(shape);
        let [c_n, h, w] = self.shape;
        for c in 0..c_n {
            let oc = if shape[0] == 1 { 0 } else { c };
            for y in 0..h {
                let oy = if shape[1] == 1 { 0 } else { y };
                for x in 0..w {
                    let ox = if shape[2] == 1 { 0 } else { x };
                    out.data[(oc * shape[1] + oy) * shape[2] + ox] += self.at(c, y, x);
                }
            }
        }
        out
    }

    /// Elementwise product with numpy-style broadcasting over size-1 axes.
    pub fn mul_broadcast(&self, other: &Tensor) -> Result<Tensor> {
        let shape = broadcast_shape(self.shape, other.shape, "mul")?;
        if self.shape == other.shape {
            return self.zip_map(other, |a, b| a * b);
        }
        let a = self.broadcast_to(shape);
        let b = other.broadcast_to(shape);
        a.zip_map(&b, |a, b| a * b)
    }

    pub fn add_broadcast(&self, other: &Tensor) -> Result<Tensor> {
        let shape = broadcast_shape(self.shape, other.shape, "add")?;
        if self.shape == other.shape {
            return self.zip_map(other, |a, b| a + b);
        }
        let a = self.broadcast_to(shape);
        let b = other.broadcast_to(shape);
        a.zip_map(&b, |a, b| a + b)
    }

    pub fn sigmoid(&self) -> Tensor {
        self.map(math::sigmoid)
    }

    pub fn relu(&self) -> Tensor {
        self.map(|v| if v > 0.0 { v } else { 0.0 })
    }
}

/// Result shape of broadcasting `a` against `b`.
pub fn broadcast_shape(a: Shape, b: Shape, op: &'static str) -> Result<Shape> {
    let mut out = [0; 3];
    for i in 0..3 {
        out[i] = if a[i] == b[i] || b[i] == 1 {
            a[i]
        } else if a[i] == 1 {
            b[i]
        } else {
            return Err(Error::ShapeMismatch {
                op,
                left: a,
                right: b,
            });
        };
    }
    Ok(out)
}

/// Which axes a mean-pooling collapses to length 1.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PoolAxis {
    /// `[C, H, W] -> [C, 1, W]`
    OverHeight,
    /// `[C, H, W] -> [C, H, 1]`
    OverWidth,
    /// `[C, H, W] -> [C, 1, 1]`
    OverSpatial,
    /// `[C, H, W] -> [1, H, W]`
    OverChannels,
}

impl PoolAxis {
    pub fn pooled_shape(self, [c, h, w]: Shape) -> Shape {
        match self {
            PoolAxis::OverHeight => [c, 1, w],
            PoolAxis::OverWidth => [c, h, 1],
            PoolAxis::OverSpatial => [c, 1, 1],
            PoolAxis::OverChannels => [1, h, w],
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct Tap {
    i0: usize,
    i1: usize,
    l: f64,
}

fn linear_taps(input: usize, output: usize) -> Vec<Tap> {
    let scale = input as f64 / output as f64;
    (0..output)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (math::floor(src) as usize).min(input - 1);
            let i1 = (i0 + 1).min(input - 1);
            Tap {
                i0,
                i1,
                l: src - i0 as f64,
            }
        })
        .collect()
}

/// Geometry of a 2-D convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvGeometry {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
}

impl ConvGeometry {
    /// Stride-1 convolution that keeps the spatial size.
    pub fn same(in_channels: usize, out_channels: usize, kernel: usize) -> Self {
        Self {
            in_channels,
            out_channels,
            kernel,
            stride: 1,
            padding: kernel / 2,
            dilation: 1,
        }
    }

    pub fn pointwise(in_channels: usize, out_channels: usize) -> Self {
        Self::same(in_channels, out_channels, 1)
    }

    pub fn weight_len(&self) -> usize {
        self.out_channels * self.in_channels * self.kernel * self.kernel
    }

    pub fn fan_in(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }

    pub fn output_size(&self, height: usize, width: usize) -> (usize, usize) {
        let span = self.dilation * (self.kernel - 1) + 1;
        let oh = (height + 2 * self.padding - span) / self.stride + 1;
        let ow = (width + 2 * self.padding - span) / self.stride + 1;
        (oh, ow)
    }

    /// Output columns `ox` whose input column `ox*stride + k*dilation - padding`
    /// lands inside `[0, width)`, as a half-open range.
    #[inline]
    fn valid_range(&self, k: usize, extent: usize, out_extent: usize) -> (usize, usize) {
        let offset = (k * self.dilation) as isize - self.padding as isize;
        let s = self.stride as isize;
        // smallest o with o*s + offset >= 0
        let lo = if offset >= 0 { 0 } else { ((-offset) + s - 1) / s };
        // largest o with o*s + offset <= extent-1
        let hi_num = extent as isize - 1 - offset;
        if hi_num < 0 {
            return (0, 0);
        }
        let hi = (hi_num / s + 1).min(out_extent as isize);
        if lo >= hi {
            (0, 0)
        } else {
            (lo as usize, hi as usize)
        }
    }
}

/// Forward 2-D cross-correlation. `weight` is `[out, in, k, k]` row-major.
pub fn conv2d(input: &Tensor, weight: &[f64], bias: Option<&[f64]>, g: &ConvGeometry) -> Tensor {
    debug_assert_eq!(input.channels(), g.in_channels);
    debug_assert_eq!(weight.len(), g.weight_len());
    let (h, w) = (input.height(), input.width());
    let (oh, ow) = g.output_size(h, w);
    let mut out = Tensor::zeros([g.out_channels, oh, ow]);
    let k = g.kernel;
    for co in 0..g.out_channels {
        let dst = &mut out.data[co * oh * ow..(co + 1) * oh * ow];
        if let Some(b) = bias {
            dst.iter_mut().for_each(|v| *v = b[co]);
        }
        for ci in 0..g.in_channels {
            let src = input.channel(ci);
            for ky in 0..k {
                let (y_lo, y_hi) = g.valid_range(ky, h, oh);
                for kx in 0..k {
                    let wv = weight[((co * g.in_channels + ci) * k + ky) * k + kx];
                    if wv == 0.0 {
                        continue;
                    }
                    let (x_lo, x_hi) = g.valid_range(kx, w, ow);
                    if x_lo >= x_hi {
                        continue;
                    }
                    let x_off = (kx * g.dilation) as isize - g.padding as isize;
                    for oy in y_lo..y_hi {
                        let iy = (oy * g.stride + ky * g.dilation) - g.padding;
                        let row_in = &src[iy * w..(iy + 1) * w];
                        let row_out = &mut dst[oy * ow..(oy + 1) * ow];
                        if g.stride == 1 {
                            let ix0 = (x_lo as isize + x_off) as usize;
                            let n = x_hi - x_lo;
                            for (o, i) in row_out[x_lo..x_hi].iter_mut().zip(&row_in[ix0..ix0 + n]) {
                                *o += wv * i;
                            }
                        } else {
                            for ox in x_lo..x_hi {
                                let ix = (ox as isize * g.stride as isize + x_off) as usize;
                                row_out[ox] += wv * row_in[ix];
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Gradients of [`conv2d`]. Returns `(d_input, d_weight, d_bias)`; the input
/// gradient is skipped when `need_input` is false.
pub fn conv2d_backward(
    input: &Tensor,
    weight: &[f64],
    grad_out: &Tensor,
    g: &ConvGeometry,
    need_input: bool,
) -> (Option<Tensor>, Vec<f64>, Vec<f64>) {
    let (h, w) = (input.height(), input.width());
    let (oh, ow) = (grad_out.height(), grad_out.width());
    let k = g.kernel;
    let mut d_input = if need_input {
        Some(Tensor::zeros(input.shape()))
    } else {
        None
    };
    let mut d_weight = vec![0.0; g.weight_len()];
    let d_bias: Vec<f64> = (0..g.out_channels)
        .map(|co| grad_out.channel(co).iter().sum())
        .collect();
    for co in 0..g.out_channels {
        let gout = grad_out.channel(co);
        for ci in 0..g.in_channels {
            let src = input.channel(ci);
            for ky in 0..k {
                let (y_lo, y_hi) = g.valid_range(ky, h, oh);
                for kx in 0..k {
                    let widx = ((co * g.in_channels + ci) * k + ky) * k + kx;
                    let wv = weight[widx];
                    let (x_lo, x_hi) = g.valid_range(kx, w, ow);
                    if x_lo >= x_hi {
                        continue;
                    }
                    let x_off = (kx * g.dilation) as isize - g.padding as isize;
                    let mut acc = 0.0;
                    for oy in y_lo..y_hi {
                        let iy = (oy * g.stride + ky * g.dilation) - g.padding;
                        let row_in = &src[iy * w..(iy + 1) * w];
                        let row_g = &gout[oy * ow..(oy + 1) * ow];
                        if g.stride == 1 {
                            let ix0 = (x_lo as isize + x_off) as usize;
                            let n = x_hi - x_lo;
                            acc += row_g[x_lo..x_hi]
                                .iter()
                                .zip(&row_in[ix0..ix0 + n])
                                .map(|(a, b)| a * b)
                                .sum::<f64>();
                            if let Some(di) = d_input.as_mut() {
                                let plane = &mut di.data[ci * h * w..(ci + 1) * h * w];
                                let row_d = &mut plane[iy * w..(iy + 1) * w];
                                for (d, gv) in row_d[ix0..ix0 + n].iter_mut().zip(&row_g[x_lo..x_hi]) {
                                    *d += wv * gv;
                                }
                            }
                        } else {
                            for ox in x_lo..x_hi {
                                let ix = (ox as isize * g.stride as isize + x_off) as usize;
                                acc += row_g[ox] * row_in[ix];
                            }
                            if let Some(di) = d_input.as_mut() {
                                let plane = &mut di.data[ci * h * w..(ci + 1) * h * w];
                                for ox in x_lo..x_hi {
                                    let ix = (ox as isize * g.stride as isize + x_off) as usize;
                                    plane[iy * w + ix] += wv * row_g[ox];
                                }
                            }
                        }
                    }
                    d_weight[widx] += acc;
                }
            }
        }
    }
    (d_input, d_weight, d_bias)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_conv(input: &Tensor, weight: &[f64], bias: &[f64], g: &ConvGeometry) -> Tensor {
        let (oh, ow) = g.output_size(input.height(), input.width());
        Tensor::from_fn([g.out_channels, oh, ow], |co, oy, ox| {
            let mut acc = bias[co];
            for ci in 0..g.in_channels {
                for ky in 0..g.kernel {
                    for kx in 0..g.kernel {
                        let iy = (oy * g.stride + ky * g.dilation) as isize - g.padding as isize;
                        let ix = (ox * g.stride + kx * g.dilation) as isize - g.padding as isize;
                        if iy < 0 || ix < 0 || iy >= input.height() as isize || ix >= input.width() as isize {
                            continue;
                        }
                        acc += weight[((co * g.in_channels + ci) * g.kernel + ky) * g.kernel + kx]
                            * input.at(ci, iy as usize, ix as usize);
                    }
                }
            }
            acc
        })
    }

    fn pseudo(n: usize, seed: u64) -> Vec<f64> {
        let mut s = seed;
        (0..n)
            .map(|_| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((s >> 11) as f64 / (1u64 << 53) as f64) - 0.5
            })
            .collect()
    }

    #[test]
    fn conv_matches_naive_loops() {
        let cases = [
            ConvGeometry::same(3, 4, 3),
            ConvGeometry { stride: 2, ..ConvGeometry::same(3, 4, 3) },
            ConvGeometry { dilation: 2, padding: 2, ..ConvGeometry::same(2, 3, 3) },
            ConvGeometry { dilation: 4, padding: 4, ..ConvGeometry::same(2, 3, 3) },
            ConvGeometry { stride: 2, padding: 0, ..ConvGeometry::pointwise(3, 2) },
            ConvGeometry::pointwise(5, 2),
        ];
        for (i, g) in cases.iter().enumerate() {
            let input = Tensor::from_vec([g.in_channels, 6, 8], pseudo(g.in_channels * 48, i as u64)).unwrap();
            let weight = pseudo(g.weight_len(), 100 + i as u64);
            let bias = pseudo(g.out_channels, 200 + i as u64);
            let fast = conv2d(&input, &weight, Some(&bias), g);
            let slow = naive_conv(&input, &weight, &bias, g);
            assert_eq!(fast.shape(), slow.shape());
            for (a, b) in fast.data().iter().zip(slow.data()) {
                assert!((a - b).abs() < 1e-12, "case {i}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn conv_backward_is_adjoint() {
        // <conv(x), g> must equal <x, conv^T(g)> and be linear in the weights.
        let g = ConvGeometry { stride: 2, dilation: 1, ..ConvGeometry::same(2, 3, 3) };
        let input = Tensor::from_vec([2, 8, 8], pseudo(128, 1)).unwrap();
        let weight = pseudo(g.weight_len(), 2);
        let out = conv2d(&input, &weight, None, &g);
        let grad = Tensor::from_vec(out.shape(), pseudo(out.len(), 3)).unwrap();
        let (di, dw, _) = conv2d_backward(&input, &weight, &grad, &g, true);
        let lhs: f64 = out.data().iter().zip(grad.data()).map(|(a, b)| a * b).sum();
        let rhs_x: f64 = input.data().iter().zip(di.unwrap().data()).map(|(a, b)| a * b).sum();
        let rhs_w: f64 = weight.iter().zip(&dw).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs_x).abs() < 1e-10);
        assert!((lhs - rhs_w).abs() < 1e-10);
    }

    #[test]
    fn bilinear_identity_and_adjoint() {
        let t = Tensor::from_vec([2, 4, 6], pseudo(48, 9)).unwrap();
        assert_eq!(t.resize_bilinear(4, 6), t);
        for (h, w) in [(8, 12), (2, 3), (5, 7)] {
            let up = t.resize_bilinear(h, w);
            let g = Tensor::from_vec(up.shape(), pseudo(up.len(), 11)).unwrap();
            let back = Tensor::resize_bilinear_backward(&g, t.shape());
            let lhs: f64 = up.data().iter().zip(g.data()).map(|(a, b)| a * b).sum();
            let rhs: f64 = t.data().iter().zip(back.data()).map(|(a, b)| a * b).sum();
            assert!((lhs - rhs).abs() < 1e-12);
        }
    }

    #[test]
    fn bilinear_halving_averages_blocks() {
        let t = Tensor::from_fn([1, 4, 4], |_, y, x| (y * 4 + x) as f64);
        let half = t.resize_bilinear(2, 2);
        assert!((half.at(0, 0, 0) - (0.0 + 1.0 + 4.0 + 5.0) / 4.0).abs() < 1e-12);
    }

    #[test]
    fn pool_shapes_and_broadcast_reduce() {
        let t = Tensor::from_vec([3, 4, 5], pseudo(60, 5)).unwrap();
        assert_eq!(t.pool(PoolAxis::OverHeight).shape(), [3, 1, 5]);
        assert_eq!(t.pool(PoolAxis::OverWidth).shape(), [3, 4, 1]);
        assert_eq!(t.pool(PoolAxis::OverSpatial).shape(), [3, 1, 1]);
        assert_eq!(t.pool(PoolAxis::OverChannels).shape(), [1, 4, 5]);
        let small = Tensor::from_vec([3, 1, 5], pseudo(15, 6)).unwrap();
        let big = small.broadcast_to([3, 4, 5]);
        assert_eq!(big.reduce_to([3, 1, 5]), small.map(|v| v * 4.0));
    }

    #[test]
    fn nearest_keeps_binary() {
        let t = Tensor::from_fn([1, 8, 8], |_, y, x| ((y + x) % 2) as f64);
        let small = t.resize_nearest(4, 4);
        assert!(small.is_binary());
        assert_eq!(small.at(0, 1, 1), t.at(0, 2, 2));
    }
}
